// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "mmfuse/errors.hpp"
#include "mmfuse/init.hpp"

namespace mmfuse {

// --- modalities -----------------------------------------------------------

Modality parse_modality(const std::string& name) {
  if (name == "tag" || name == "hashtag" || name == "hashtags") return Modality::hashtag;
  if (name == "caption" || name == "text") return Modality::text;
  if (name == "image" || name == "visual") return Modality::image;
  throw ConfigError("unknown modality '" + name + "' (expected image, caption or tag)");
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::hashtag: return "tag";
    case Modality::text: return "caption";
    case Modality::image: return "image";
  }
  return "?";
}

bool ModalitySet::has(Modality m) const {
  switch (m) {
    case Modality::hashtag: return hashtag;
    case Modality::text: return text;
    case Modality::image: return image;
  }
  return false;
}

ModalitySet ModalitySet::parse(const std::string& list) {
  ModalitySet s{false, false, false};
  std::stringstream in(list);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (item.empty()) continue;
    switch (parse_modality(item)) {
      case Modality::hashtag: s.hashtag = true; break;
      case Modality::text: s.text = true; break;
      case Modality::image: s.image = true; break;
    }
  }
  if (s.count() == 0) throw ConfigError("no modality selected");
  return s;
}

std::string ModalitySet::str() const {
  std::string out;
  for (Modality m : {Modality::image, Modality::text, Modality::hashtag}) {
    if (!has(m)) continue;
    if (!out.empty()) out.push_back(',');
    out += modality_name(m);
  }
  return out;
}

// --- config ---------------------------------------------------------------

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.embed_dim = 300;
  c.hashtag_hidden = 128;
  c.gru_hidden = 128;
  c.backbone = {64, 128, 256, 512, 512};
  c.image_size = 224;
  c.scse_ratio = 16;
  c.proj_dim = 256;
  c.classifier = {256, 128, 64};
  return c;
}

std::size_t ModelConfig::image_width() const {
  if (!feature_map.empty()) return feature_map.back();
  return backbone.empty() ? 3 : backbone.back();
}

Shape ModelConfig::image_input_shape() const {
  if (!feature_map.empty()) return feature_map;
  return {image_size, image_size, 3};
}

Shape ModelConfig::image_map_shape() const {
  if (!feature_map.empty()) return feature_map;
  const std::size_t s = image_size >> backbone.size();
  return {s, s, image_width()};
}

std::size_t ModelConfig::fused_width() const {
  if (!ablations.no_projection) return proj_dim;
  std::size_t w = 0;
  if (modalities.hashtag) w = std::max(w, hashtag_hidden);
  if (modalities.text) w = std::max(w, 2 * gru_hidden);
  if (modalities.image) w = std::max(w, image_width());
  return w;
}

std::size_t ModelConfig::comprehensive_width() const {
  std::size_t w = 0;
  if (modalities.hashtag) w += hashtag_hidden;
  if (modalities.text) w += 2 * gru_hidden;
  if (modalities.image) w += image_width();
  if (fusion_active()) w += fused_width();
  return w;
}

void ModelConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  need(embed_dim > 0 && hashtag_hidden > 0 && gru_hidden > 0 && proj_dim > 0, "layer widths must be positive");
  need(!classifier.empty(), "classifier needs at least one hidden layer");
  need(std::all_of(classifier.begin(), classifier.end(), [](std::size_t w) { return w > 0; }),
       "classifier widths must be positive");
  need(modalities.count() >= 1, "no modality selected");
  need(!(ablations.no_fusion && modalities.count() == 1), "no-fusion conflicts with a single-modality model");
  need(!(ablations.no_projection && modalities.count() == 1),
       "no-projection conflicts with a single-modality model");
  need(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  need(bn_momentum >= 0.0 && bn_momentum < 1.0 && bn_eps > 0.0, "invalid batchnorm constants");
  need(max_hashtags >= 1 && max_text >= 1, "input lengths must be at least 1");
  need(buckets >= 1 && vocab_max >= 3, "vocabulary needs room for the reserved tokens");
  if (feature_map.empty()) {
    need(!backbone.empty(), "image backbone needs at least one stage");
    need(std::all_of(backbone.begin(), backbone.end(), [](std::size_t w) { return w > 0; }),
         "backbone widths must be positive");
    need(backbone.size() < 16 && (image_size >> backbone.size()) >= 1,
         "image of " + std::to_string(image_size) + " pixels is too small for " + std::to_string(backbone.size()) +
             " pooling stages");
  } else {
    need(feature_map.size() == 3 && shape_size(feature_map) > 0, "feature map shape must be h x w x c");
  }
  need(scse_ratio >= 1 && image_width() % scse_ratio == 0,
       "scse reduction ratio " + std::to_string(scse_ratio) + " does not divide " + std::to_string(image_width()) +
           " channels");
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> names{"three-branch", "ours_noF",     "ours_noP",      "ours_noAtt",
                                              "ours_noOCR",   "image_only",   "caption_only",  "tag_only",
                                              "image+caption", "image+tag",   "caption+tag"};
  return names;
}

void apply_variant(ModelConfig& c, const std::string& name) {
  c.modalities = ModalitySet{};
  c.ablations = Ablations{};
  if (name == "three-branch") return;
  if (name == "ours_noF") c.ablations.no_fusion = true;
  else if (name == "ours_noP") c.ablations.no_projection = true;
  else if (name == "ours_noAtt") c.ablations.no_attention = true;
  else if (name == "ours_noOCR") c.ablations.no_ocr = true;
  else if (name == "image_only") c.modalities = ModalitySet::parse("image");
  else if (name == "caption_only") c.modalities = ModalitySet::parse("caption");
  else if (name == "tag_only") c.modalities = ModalitySet::parse("tag");
  else if (name == "image+caption") c.modalities = ModalitySet::parse("image,caption");
  else if (name == "image+tag") c.modalities = ModalitySet::parse("image,tag");
  else if (name == "caption+tag") c.modalities = ModalitySet::parse("caption,tag");
  else throw ConfigError("unknown variant '" + name + "'");
}

// --- model ----------------------------------------------------------------

template <Real T>
Model<T> Model<T>::create(const ModelConfig& config, Vocab vocab, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model m;
  m.config = config;
  const std::size_t d = config.embed_dim, dh = config.hashtag_hidden, g = config.gru_hidden;
  const std::size_t c = config.image_width();

  m.embed = EmbeddingTable<T>::create(std::move(vocab), d, config.buckets, rng, config.train_embeddings);

  m.hashtag.w = glorot<T>("hashtag.w", dh, d, rng);
  m.hashtag.b = zeros<T>("hashtag.b", {dh});
  m.hashtag.max_hashtags = config.max_hashtags;
  const auto& tags = config.anchor_hashtags.empty() ? default_anchor_hashtags() : config.anchor_hashtags;
  m.anchor = build_anchor(tags, m.embed, m.hashtag.w.value, m.hashtag.b.value);
  m.hashtag.seta = SeTaParams<T>::create("hashtag.seta", dh, dh, m.anchor.value, rng);

  m.text.gru.fwd = GruParams<T>::create("text.gru_fwd", d, g, rng);
  m.text.gru.bwd = GruParams<T>::create("text.gru_bwd", d, g, rng);
  m.text.seta = SeTaParams<T>::create("text.seta", 2 * g, 2 * g, m.anchor.value, rng);
  m.text.max_text = config.max_text;

  m.image.input_shape = config.image_input_shape();
  m.image.precomputed = !config.feature_map.empty();
  if (!m.image.precomputed) {
    std::size_t cin = 3;
    for (std::size_t k = 0; k < config.backbone.size(); ++k) {
      const std::size_t cout = config.backbone[k];
      const std::string name = "image.conv" + std::to_string(k);
      m.image.backbone.push_back(
          {glorot<T>(name + ".kernel", {3, 3, cin, cout}, 9 * cin, 9 * cout, rng), zeros<T>(name + ".bias", {cout})});
      cin = cout;
    }
  }
  m.image.scse = ScseParams<T>::create("image.scse", c, config.scse_ratio, rng, config.zero_init_scse);

  const std::array<std::size_t, 3> widths{dh, 2 * g, c};
  for (Modality mod : {Modality::hashtag, Modality::text, Modality::image}) {
    const auto i = static_cast<std::size_t>(mod);
    const std::string name = std::string("proj.") + modality_name(mod);
    m.proj_w[i] = glorot<T>(name + ".w", config.proj_dim, widths[i], rng);
    m.proj_b[i] = zeros<T>(name + ".b", {config.proj_dim});
  }

  const std::size_t fw = config.fused_width();
  std::optional<Tensor<T>> fusion_anchor;
  if (config.fusion_anchor) {
    Tape<T> tape(false);
    Var<T> a = tape.constant(m.anchor.value);
    a = config.ablations.no_projection ? pad_to(a, fw) : project(a, Modality::hashtag, m);
    fusion_anchor = a.value();
  }
  m.fusion = SeTaParams<T>::create("fusion.seta", fw, fw, std::move(fusion_anchor), rng);

  std::size_t in = config.comprehensive_width();
  for (std::size_t k = 0; k < config.classifier.size(); ++k) {
    const std::size_t out = config.classifier[k];
    const std::string name = "classifier." + std::to_string(k);
    DenseBn<T> layer;
    layer.w = glorot<T>(name + ".w", out, in, rng);
    layer.b = zeros<T>(name + ".b", {out});
    layer.gamma = Parameter<T>{name + ".gamma", Tensor<T>({out}, T{1}), true};
    layer.beta = zeros<T>(name + ".beta", {out});
    layer.bn = BatchNormState<T>{Tensor<T>({out}, T{0}), Tensor<T>({out}, T{1}), static_cast<T>(config.bn_momentum),
                                 static_cast<T>(config.bn_eps)};
    m.dense.push_back(std::move(layer));
    in = out;
  }
  m.out_w = glorot<T>("classifier.out.w", 1, in, rng);
  m.out_b = zeros<T>("classifier.out.b", {1});
  return m;
}

namespace {

template <typename M, typename P>
std::vector<P*> collect(M& m) {
  std::vector<P*> out;
  const auto& cfg = m.config;
  auto add = [&](P& p) { out.push_back(&p); };
  if (cfg.modalities.hashtag || cfg.modalities.text) {
    add(m.embed.vectors);
    add(m.embed.buckets);
  }
  if (cfg.modalities.hashtag) {
    add(m.hashtag.w);
    add(m.hashtag.b);
    for (auto* p : {&m.hashtag.seta.w1, &m.hashtag.seta.b1, &m.hashtag.seta.ctx, &m.hashtag.seta.w2,
                    &m.hashtag.seta.b2})
      add(*p);
  }
  if (cfg.modalities.text) {
    for (auto* gru : {&m.text.gru.fwd, &m.text.gru.bwd})
      for (auto* p : {&gru->wz, &gru->uz, &gru->bz, &gru->wr, &gru->ur, &gru->br, &gru->wh, &gru->uh, &gru->bh}) add(*p);
    for (auto* p : {&m.text.seta.w1, &m.text.seta.b1, &m.text.seta.ctx, &m.text.seta.w2, &m.text.seta.b2}) add(*p);
  }
  if (cfg.modalities.image) {
    for (auto& layer : m.image.backbone) {
      add(layer.kernel);
      add(layer.bias);
    }
    auto& s = m.image.scse;
    for (auto* p : {&s.fc1_w, &s.fc1_b, &s.fc2_w, &s.fc2_b, &s.sp_w, &s.sp_b}) add(*p);
  }
  if (cfg.fusion_active()) {
    if (!cfg.ablations.no_projection) {
      for (Modality mod : {Modality::hashtag, Modality::text, Modality::image}) {
        if (!cfg.modalities.has(mod)) continue;
        add(m.proj_w[static_cast<std::size_t>(mod)]);
        add(m.proj_b[static_cast<std::size_t>(mod)]);
      }
    }
    for (auto* p : {&m.fusion.w1, &m.fusion.b1, &m.fusion.ctx, &m.fusion.w2, &m.fusion.b2}) add(*p);
  }
  for (auto& layer : m.dense)
    for (auto* p : {&layer.w, &layer.b, &layer.gamma, &layer.beta}) add(*p);
  add(m.out_w);
  add(m.out_b);
  return out;
}

template <Real U, Real T>
Parameter<U> cast_param(const Parameter<T>& p) {
  return Parameter<U>{p.name, p.value.template cast<U>(), p.trainable};
}

template <Real U, Real T>
SeTaParams<U> cast_seta(const SeTaParams<T>& s) {
  SeTaParams<U> o;
  o.w1 = cast_param<U>(s.w1);
  o.b1 = cast_param<U>(s.b1);
  o.ctx = cast_param<U>(s.ctx);
  o.w2 = cast_param<U>(s.w2);
  o.b2 = cast_param<U>(s.b2);
  if (s.anchor) o.anchor = s.anchor->template cast<U>();
  return o;
}

template <Real U, Real T>
GruParams<U> cast_gru(const GruParams<T>& g) {
  return GruParams<U>{cast_param<U>(g.wz), cast_param<U>(g.uz), cast_param<U>(g.bz),
                      cast_param<U>(g.wr), cast_param<U>(g.ur), cast_param<U>(g.br),
                      cast_param<U>(g.wh), cast_param<U>(g.uh), cast_param<U>(g.bh)};
}

}  // namespace

template <Real T>
std::vector<Parameter<T>*> Model<T>::parameters() {
  return collect<Model<T>, Parameter<T>>(*this);
}

template <Real T>
std::vector<const Parameter<T>*> Model<T>::parameters() const {
  return collect<const Model<T>, const Parameter<T>>(*this);
}

template <Real T>
std::vector<Parameter<T>*> Model<T>::trainable() {
  std::vector<Parameter<T>*> out;
  for (auto* p : parameters())
    if (p->trainable) out.push_back(p);
  return out;
}

template <Real T>
template <Real U>
Model<U> Model<T>::cast() const {
  Model<U> m;
  m.config = config;
  m.embed.vocab = embed.vocab;
  m.embed.vectors = cast_param<U>(embed.vectors);
  m.embed.buckets = cast_param<U>(embed.buckets);
  m.embed.min_n = embed.min_n;
  m.embed.max_n = embed.max_n;
  m.anchor = AnchorVector<U>{anchor.value.template cast<U>(), anchor.source_hashtags};
  m.hashtag.w = cast_param<U>(hashtag.w);
  m.hashtag.b = cast_param<U>(hashtag.b);
  m.hashtag.seta = cast_seta<U>(hashtag.seta);
  m.hashtag.max_hashtags = hashtag.max_hashtags;
  m.text.gru.fwd = cast_gru<U>(text.gru.fwd);
  m.text.gru.bwd = cast_gru<U>(text.gru.bwd);
  m.text.seta = cast_seta<U>(text.seta);
  m.text.max_text = text.max_text;
  for (const auto& layer : image.backbone)
    m.image.backbone.push_back({cast_param<U>(layer.kernel), cast_param<U>(layer.bias)});
  const auto& s = image.scse;
  m.image.scse = ScseParams<U>{cast_param<U>(s.fc1_w), cast_param<U>(s.fc1_b), cast_param<U>(s.fc2_w),
                               cast_param<U>(s.fc2_b), cast_param<U>(s.sp_w),  cast_param<U>(s.sp_b),
                               s.ratio};
  m.image.input_shape = image.input_shape;
  m.image.precomputed = image.precomputed;
  for (std::size_t i = 0; i < 3; ++i) {
    m.proj_w[i] = cast_param<U>(proj_w[i]);
    m.proj_b[i] = cast_param<U>(proj_b[i]);
  }
  m.fusion = cast_seta<U>(fusion);
  for (const auto& layer : dense) {
    DenseBn<U> o;
    o.w = cast_param<U>(layer.w);
    o.b = cast_param<U>(layer.b);
    o.gamma = cast_param<U>(layer.gamma);
    o.beta = cast_param<U>(layer.beta);
    o.bn = BatchNormState<U>{layer.bn.running_mean.template cast<U>(), layer.bn.running_var.template cast<U>(),
                             static_cast<U>(layer.bn.momentum), static_cast<U>(layer.bn.eps)};
    m.dense.push_back(std::move(o));
  }
  m.out_w = cast_param<U>(out_w);
  m.out_b = cast_param<U>(out_b);
  return m;
}

// --- encoding -------------------------------------------------------------

template <Real T>
EncodedPost<T> encode_post(const Post& post, const Model<T>& model) {
  const auto& cfg = model.config;
  EncodedPost<T> e;
  if (cfg.modalities.hashtag) {
    for (const auto& raw : post.hashtags) {
      if (e.hashtag_words.size() == cfg.max_hashtags) break;
      try {
        e.hashtag_words.push_back(normalize_hashtag(raw));
      } catch (const InvalidHashtagError&) {
      }
    }
    for (const auto& w : e.hashtag_words) e.hashtags.push_back(model.embed.lookup(w));
  }
  if (cfg.modalities.text) {
    e.tokens = text_stream(tokenize(post.caption), tokenize(post.ocr_text), cfg.max_text, !cfg.ablations.no_ocr);
    for (const auto& w : e.tokens) e.text.push_back(model.embed.lookup(w));
  }
  if (cfg.modalities.image && post.image) {
    if (post.image->shape() != model.image.input_shape) {
      throw DataError("post '" + post.id + "': image shape " + shape_str(post.image->shape()) + ", model expects " +
                      shape_str(model.image.input_shape));
    }
    if constexpr (std::is_same_v<T, float>) {
      e.image = post.image;
    } else {
      e.image = std::make_shared<const Tensor<T>>(post.image->template cast<T>());
    }
  }
  return e;
}

template <Real T>
std::vector<EncodedPost<T>> encode_dataset(const Dataset& data, const Model<T>& model) {
  std::vector<EncodedPost<T>> out;
  out.reserve(data.size());
  for (const auto& p : data.posts) out.push_back(encode_post(p, model));
  return out;
}

// --- forward --------------------------------------------------------------

template <Real T>
Var<T> project(Var<T> feature, Modality m, const Model<T>& model) {
  const auto i = static_cast<std::size_t>(m);
  if (i > 2) throw ConfigError("project: unknown modality");
  Tape<T>& t = *feature.tape;
  return relu(linear(feature, t.param(model.proj_w[i]), std::optional<Var<T>>(t.param(model.proj_b[i]))));
}

template <Real T>
Var<T> fuse(const std::vector<Var<T>>& features, const SeTaParams<T>& params, bool uniform,
            std::optional<SeTaVars<T>>* trace) {
  if (features.empty()) throw DimensionError("fuse: no features");
  Var<T> items = stack(features);
  const Mask mask(features.size(), true);
  if (uniform) return attend(items, uniform_weights(*items.tape, mask));
  SeTaVars<T> att = seta_weights(items, mask, params);
  if (trace) *trace = att;
  return attend(items, att.weights);
}

template <Real T>
Var<T> comprehensive(const std::vector<Var<T>>& parts) {
  return concat(parts);
}

template <Real T>
Var<T> post_features(Tape<T>& tape, const Model<T>& model, const EncodedPost<T>& post, SampleTrace<T>* trace) {
  const auto& cfg = model.config;
  const bool uniform = cfg.ablations.no_attention;
  std::vector<Var<T>> parts;
  std::vector<std::pair<Modality, Var<T>>> branch;
  if (cfg.modalities.hashtag) {
    auto out = hashtag_branch(tape, std::span<const WordRef>(post.hashtags), model.embed, model.hashtag, uniform);
    if (trace) trace->hashtag = out.attention;
    branch.emplace_back(Modality::hashtag, out.feature);
  }
  if (cfg.modalities.text) {
    auto out = text_branch(tape, std::span<const WordRef>(post.text), model.embed, model.text, uniform);
    if (trace) trace->text = out.attention;
    branch.emplace_back(Modality::text, out.feature);
  }
  if (cfg.modalities.image) {
    auto out = image_branch(tape, post.image.get(), model.image, !uniform);
    if (trace) {
      trace->gates = out.gates;
      trace->map_shape = out.map_shape;
    }
    branch.emplace_back(Modality::image, out.feature);
  }
  for (const auto& [m, f] : branch) parts.push_back(f);
  if (cfg.fusion_active()) {
    const std::size_t fw = cfg.fused_width();
    std::vector<Var<T>> projected;
    for (const auto& [m, f] : branch)
      projected.push_back(cfg.ablations.no_projection ? pad_to(f, fw) : project(f, m, model));
    std::optional<SeTaVars<T>> att;
    parts.push_back(fuse(projected, model.fusion, uniform, &att));
    if (trace) {
      trace->fusion = att;
      trace->fusion_mask = Mask(projected.size(), true);
    }
  }
  return comprehensive(parts);
}

namespace {

template <Real T, typename BnFn>
Var<T> head(Var<T> x, const Model<T>& model, BnFn&& bn, Mode mode, Rng* rng) {
  Tape<T>& t = *x.tape;
  const Shape in = x.shape();
  if (in.size() != 2 || in[1] != model.config.comprehensive_width()) {
    throw DimensionError("classifier: expected [B x " + std::to_string(model.config.comprehensive_width()) +
                         "], got " + shape_str(in));
  }
  Var<T> h = x;
  for (std::size_t k = 0; k < model.dense.size(); ++k) {
    const auto& layer = model.dense[k];
    h = linear(h, t.param(layer.w), std::optional<Var<T>>(t.param(layer.b)));
    h = relu(bn(k, h, t.param(layer.gamma), t.param(layer.beta)));
    if (mode == Mode::train) h = dropout(h, static_cast<T>(model.config.dropout), mode, *rng);
  }
  Var<T> out = linear(h, t.param(model.out_w), std::optional<Var<T>>(t.param(model.out_b)));
  return reshape(out, {in[0]});
}

}  // namespace

template <Real T>
Var<T> classifier_logits(Var<T> x, Model<T>& model, Mode mode, Rng& rng) {
  return head(
      x, model,
      [&](std::size_t k, Var<T> h, Var<T> g, Var<T> b) { return batchnorm(h, g, b, model.dense[k].bn, mode); }, mode,
      &rng);
}

template <Real T>
Var<T> classifier_logits(Var<T> x, const Model<T>& model) {
  return head(
      x, model,
      [&](std::size_t k, Var<T> h, Var<T> g, Var<T> b) {
        const BatchNormState<T>& s = model.dense[k].bn;
        return batchnorm(h, g, b, s);
      },
      Mode::infer, nullptr);
}

template <Real T>
Var<T> batch_logits(Tape<T>& tape, Model<T>& model, const std::vector<const EncodedPost<T>*>& batch, Mode mode,
                    Rng& rng) {
  std::vector<Var<T>> rows;
  rows.reserve(batch.size());
  for (const auto* p : batch) rows.push_back(post_features(tape, model, *p));
  return classifier_logits(stack(rows), model, mode, rng);
}

template <Real T>
Var<T> batch_logits(Tape<T>& tape, const Model<T>& model, const std::vector<const EncodedPost<T>*>& batch,
                    std::vector<SampleTrace<T>>* traces) {
  std::vector<Var<T>> rows;
  rows.reserve(batch.size());
  if (traces) traces->assign(batch.size(), SampleTrace<T>{});
  for (std::size_t i = 0; i < batch.size(); ++i)
    rows.push_back(post_features(tape, model, *batch[i], traces ? &(*traces)[i] : nullptr));
  return classifier_logits(stack(rows), model);
}

double bce_loss(double p, int y) {
  constexpr double eps = 1e-7;
  p = std::clamp(p, eps, 1.0 - eps);
  return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

double mean_bce_loss(const std::vector<double>& p, const std::vector<int>& y) {
  if (p.size() != y.size() || p.empty()) throw DimensionError("loss: probabilities and labels differ in length");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += bce_loss(p[i], y[i]);
  return s / static_cast<double>(p.size());
}

namespace {
template <Real T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}
}  // namespace

template <Real T>
AttentionDump forward_full(const Post& post, const Model<T>& model) {
  EncodedPost<T> e = encode_post(post, model);
  Tape<T> tape(false);
  std::vector<SampleTrace<T>> traces;
  Var<T> logit = batch_logits(tape, model, {&e}, &traces);
  const SampleTrace<T>& tr = traces.front();
  AttentionDump d;
  d.id = post.id;
  const double z = static_cast<double>(logit.value()[0]);
  d.probability = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  d.hashtags = e.hashtag_words;
  d.tokens = e.tokens;
  if (tr.hashtag) d.hashtag_weights = to_doubles(tr.hashtag->weights.value());
  if (tr.text) d.text_weights = to_doubles(tr.text->weights.value());
  if (model.config.fusion_active()) {
    for (Modality m : {Modality::hashtag, Modality::text, Modality::image})
      if (model.config.modalities.has(m)) d.fusion_modalities.emplace_back(modality_name(m));
    if (tr.fusion) d.fusion_weights = to_doubles(tr.fusion->weights.value());
  }
  if (tr.gates) {
    d.channel_gates = to_doubles(tr.gates->channel.value());
    d.spatial_gates = to_doubles(tr.gates->spatial.value());
    d.gate_shape = {tr.map_shape[0], tr.map_shape[1]};
  }
  return d;
}

std::string attention_json(const AttentionDump& d) {
  nlohmann::ordered_json j;
  j["id"] = d.id;
  j["probability"] = d.probability;
  j["hashtags"] = d.hashtags;
  j["hashtag_weights"] = d.hashtag_weights;
  j["tokens"] = d.tokens;
  j["text_weights"] = d.text_weights;
  j["fusion_modalities"] = d.fusion_modalities;
  j["fusion_weights"] = d.fusion_weights;
  j["channel_gates"] = d.channel_gates;
  j["spatial_gates"] = d.spatial_gates;
  j["spatial_shape"] = d.gate_shape;
  return j.dump();
}

#define MMFUSE_INSTANTIATE(T)                                                                                     \
  template struct Model<T>;                                                                                       \
  template EncodedPost<T> encode_post(const Post&, const Model<T>&);                                              \
  template std::vector<EncodedPost<T>> encode_dataset(const Dataset&, const Model<T>&);                           \
  template Var<T> project(Var<T>, Modality, const Model<T>&);                                                     \
  template Var<T> fuse(const std::vector<Var<T>>&, const SeTaParams<T>&, bool, std::optional<SeTaVars<T>>*);      \
  template Var<T> comprehensive(const std::vector<Var<T>>&);                                                      \
  template Var<T> post_features(Tape<T>&, const Model<T>&, const EncodedPost<T>&, SampleTrace<T>*);              \
  template Var<T> classifier_logits(Var<T>, Model<T>&, Mode, Rng&);                                               \
  template Var<T> classifier_logits(Var<T>, const Model<T>&);                                                     \
  template Var<T> batch_logits(Tape<T>&, Model<T>&, const std::vector<const EncodedPost<T>*>&, Mode, Rng&);       \
  template Var<T> batch_logits(Tape<T>&, const Model<T>&, const std::vector<const EncodedPost<T>*>&,              \
                               std::vector<SampleTrace<T>>*);                                                     \
  template AttentionDump forward_full(const Post&, const Model<T>&);

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace mmfuse
