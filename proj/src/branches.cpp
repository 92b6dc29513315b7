// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/branches.hpp"

#include <algorithm>

#include "mmfuse/errors.hpp"
#include "mmfuse/init.hpp"

namespace mmfuse {

namespace {

template <Real T>
std::optional<Var<T>> opt(Var<T> v) {
  return std::optional<Var<T>>(v);
}

template <Real T>
void append(std::vector<Parameter<T>*>& out, std::vector<Parameter<T>*> more) {
  out.insert(out.end(), more.begin(), more.end());
}

}  // namespace

// --- hashtags -------------------------------------------------------------

template <Real T>
std::vector<Parameter<T>*> HashtagBranch<T>::parameters() {
  std::vector<Parameter<T>*> out{&w, &b};
  append(out, seta.parameters());
  return out;
}

template <Real T>
Var<T> hashtag_hidden(Var<T> embedded, const HashtagBranch<T>& params) {
  Tape<T>& t = *embedded.tape;
  return tanh(linear(embedded, t.param(params.w), opt(t.param(params.b))));
}

template <Real T>
BranchOutput<T> hashtag_branch(Tape<T>& tape, std::span<const WordRef> tags, const EmbeddingTable<T>& table,
                               const HashtagBranch<T>& params, bool uniform_attention) {
  if (tags.size() > params.max_hashtags) tags = tags.first(params.max_hashtags);
  if (tags.empty()) return {tape.constant(Tensor<T>({params.width()}, T{0})), std::nullopt, {}};
  Var<T> hidden = hashtag_hidden(embed_refs(tape, table, tags), params);
  Mask mask(tags.size(), true);
  if (uniform_attention) return {attend(hidden, uniform_weights(tape, mask)), std::nullopt, mask};
  SeTaVars<T> att = seta_weights(hidden, mask, params.seta);
  return {attend(hidden, att.weights), att, mask};
}

// --- GRU ------------------------------------------------------------------

template <Real T>
GruParams<T> GruParams<T>::create(const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng) {
  GruParams p;
  p.wz = glorot<T>(prefix + ".wz", hidden, in, rng);
  p.uz = glorot<T>(prefix + ".uz", hidden, hidden, rng);
  p.bz = zeros<T>(prefix + ".bz", {hidden});
  p.wr = glorot<T>(prefix + ".wr", hidden, in, rng);
  p.ur = glorot<T>(prefix + ".ur", hidden, hidden, rng);
  p.br = zeros<T>(prefix + ".br", {hidden});
  p.wh = glorot<T>(prefix + ".wh", hidden, in, rng);
  p.uh = glorot<T>(prefix + ".uh", hidden, hidden, rng);
  p.bh = zeros<T>(prefix + ".bh", {hidden});
  return p;
}

namespace {

// One step given the input projections xz, xr, xh (biases included).
template <Real T>
Var<T> gru_step(Var<T> xz, Var<T> xr, Var<T> xh, Var<T> h, const GruParams<T>& p) {
  Tape<T>& t = *h.tape;
  const std::optional<Var<T>> none;
  Var<T> z = sigmoid(add(xz, linear(h, t.param(p.uz), none)));
  Var<T> r = sigmoid(add(xr, linear(h, t.param(p.ur), none)));
  Var<T> c = tanh(add(xh, linear(mul(r, h), t.param(p.uh), none)));
  return add(h, mul(z, sub(c, h)));
}

}  // namespace

template <Real T>
Var<T> gru_cell(Var<T> x, Var<T> h, const GruParams<T>& p) {
  Tape<T>& t = *x.tape;
  if (x.value().rank() != 1 || h.value().shape() != Shape{p.hidden()} ||
      x.value().dim(0) != p.wz.value.dim(1)) {
    throw DimensionError("gru_cell: input " + shape_str(x.value().shape()) + ", state " +
                         shape_str(h.value().shape()) + " for a cell " + shape_str(p.wz.value.shape()));
  }
  return gru_step(linear(x, t.param(p.wz), opt(t.param(p.bz))), linear(x, t.param(p.wr), opt(t.param(p.br))),
                  linear(x, t.param(p.wh), opt(t.param(p.bh))), h, p);
}

template <Real T>
Var<T> bigru_encode(Var<T> sequence, const Mask& mask, const BiGru<T>& params) {
  Tape<T>& t = *sequence.tape;
  const Shape sv = sequence.shape();
  if (sv.size() != 2 || sv[0] == 0) throw DimensionError("bigru: sequence must be [T x d] with T >= 1");
  if (mask.size() != sv[0]) throw DimensionError("bigru: mask length differs from sequence length");
  const std::size_t steps = sv[0];
  const std::size_t g = params.fwd.hidden();
  if (params.bwd.hidden() != g) throw DimensionError("bigru: directions differ in width");

  auto run = [&](const GruParams<T>& p, bool reverse) {
    Var<T> xz = linear(sequence, t.param(p.wz), opt(t.param(p.bz)));
    Var<T> xr = linear(sequence, t.param(p.wr), opt(t.param(p.br)));
    Var<T> xh = linear(sequence, t.param(p.wh), opt(t.param(p.bh)));
    std::vector<std::optional<Var<T>>> states(steps);
    Var<T> h = t.constant(Tensor<T>({g}, T{0}));
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t i = reverse ? steps - 1 - k : k;
      if (!mask[i]) continue;
      h = gru_step(row(xz, i), row(xr, i), row(xh, i), h, p);
      states[i] = h;
    }
    return states;
  };
  const auto fwd = run(params.fwd, false);
  const auto bwd = run(params.bwd, true);

  std::vector<Var<T>> rows;
  rows.reserve(steps);
  std::optional<Var<T>> zero;
  for (std::size_t i = 0; i < steps; ++i) {
    if (mask[i]) {
      rows.push_back(concat(std::vector<Var<T>>{*bwd[i], *fwd[i]}));
    } else {
      if (!zero) zero = t.constant(Tensor<T>({2 * g}, T{0}));
      rows.push_back(*zero);
    }
  }
  return stack(rows);
}

template <Real T>
std::vector<Parameter<T>*> TextBranch<T>::parameters() {
  std::vector<Parameter<T>*> out;
  append(out, gru.fwd.parameters());
  append(out, gru.bwd.parameters());
  append(out, seta.parameters());
  return out;
}

std::vector<std::string> text_stream(const std::vector<std::string>& caption, const std::vector<std::string>& ocr,
                                     std::size_t max_len, bool use_ocr) {
  std::vector<std::string> out;
  if (caption.empty() && (ocr.empty() || !use_ocr)) return out;
  out.reserve(std::min(max_len, caption.size() + ocr.size() + 1));
  for (const auto& w : caption) {
    if (out.size() == max_len) return out;
    out.push_back(w);
  }
  if (!use_ocr) return out;
  if (out.size() < max_len) out.emplace_back(kOcrToken);
  for (const auto& w : ocr) {
    if (out.size() == max_len) break;
    out.push_back(w);
  }
  return out;
}

template <Real T>
BranchOutput<T> text_branch(Tape<T>& tape, std::span<const WordRef> tokens, const EmbeddingTable<T>& table,
                            const TextBranch<T>& params, bool uniform_attention) {
  if (tokens.size() > params.max_text) tokens = tokens.first(params.max_text);
  if (tokens.empty()) return {tape.constant(Tensor<T>({params.width()}, T{0})), std::nullopt, {}};
  Mask mask(tokens.size(), true);
  Var<T> states = bigru_encode(embed_refs(tape, table, tokens), mask, params.gru);
  if (uniform_attention) return {attend(states, uniform_weights(tape, mask)), std::nullopt, mask};
  SeTaVars<T> att = seta_weights(states, mask, params.seta);
  return {attend(states, att.weights), att, mask};
}

// --- image ----------------------------------------------------------------

template <Real T>
ScseParams<T> ScseParams<T>::create(const std::string& prefix, std::size_t channels, std::size_t ratio, Rng& rng,
                                    bool zero_init) {
  if (ratio == 0 || channels % ratio != 0) {
    throw ConfigError("scse: reduction ratio " + std::to_string(ratio) + " does not divide " +
                      std::to_string(channels) + " channels");
  }
  const std::size_t mid = channels / ratio;
  ScseParams p;
  p.ratio = ratio;
  if (zero_init) {
    p.fc1_w = zeros<T>(prefix + ".fc1_w", {mid, channels});
    p.fc2_w = zeros<T>(prefix + ".fc2_w", {channels, mid});
    p.sp_w = zeros<T>(prefix + ".sp_w", {1, channels});
  } else {
    p.fc1_w = glorot<T>(prefix + ".fc1_w", mid, channels, rng);
    p.fc2_w = glorot<T>(prefix + ".fc2_w", channels, mid, rng);
    p.sp_w = glorot<T>(prefix + ".sp_w", 1, channels, rng);
  }
  p.fc1_b = zeros<T>(prefix + ".fc1_b", {mid});
  p.fc2_b = zeros<T>(prefix + ".fc2_b", {channels});
  p.sp_b = zeros<T>(prefix + ".sp_b", {1});
  return p;
}

template <Real T>
ScseGates<T> scse_gates(Var<T> z, const ScseParams<T>& p) {
  Tape<T>& t = *z.tape;
  const Shape s = z.shape();
  if (s.size() != 3) throw DimensionError("scse: feature map must be [h x w x c], got " + shape_str(s));
  const std::size_t c = s[2];
  if (c != p.fc2_b.value.dim(0)) {
    throw DimensionError("scse: map has " + std::to_string(c) + " channels, gates expect " +
                         std::to_string(p.fc2_b.value.dim(0)));
  }
  if (c % p.ratio != 0) throw ConfigError("scse: reduction ratio does not divide the channel count");
  Var<T> squeezed = relu(linear(global_avg_pool(z), t.param(p.fc1_w), opt(t.param(p.fc1_b))));
  Var<T> channel = sigmoid(linear(squeezed, t.param(p.fc2_w), opt(t.param(p.fc2_b))));
  Var<T> flat = reshape(z, {s[0] * s[1], c});
  Var<T> spatial = sigmoid(reshape(linear(flat, t.param(p.sp_w), opt(t.param(p.sp_b))), {s[0] * s[1]}));
  return {channel, spatial};
}

template <Real T>
Var<T> apply_scse(Var<T> z, const ScseGates<T>& gates) {
  const Shape s = z.shape();
  if (s.size() != 3) throw DimensionError("apply_scse: feature map must be [h x w x c], got " + shape_str(s));
  Var<T> flat = reshape(z, {s[0] * s[1], s[2]});
  return reshape(add(scale_columns(flat, gates.channel), scale_rows(flat, gates.spatial)), s);
}

template <Real T>
Shape ImageBranch<T>::map_shape() const {
  if (precomputed || backbone.empty()) return input_shape;
  Shape s = input_shape;
  for (const auto& layer : backbone) {
    s[0] /= 2;
    s[1] /= 2;
    s[2] = layer.kernel.value.dim(3);
  }
  return s;
}

template <Real T>
std::vector<Parameter<T>*> ImageBranch<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& layer : backbone) {
    out.push_back(&layer.kernel);
    out.push_back(&layer.bias);
  }
  append(out, scse.parameters());
  return out;
}

template <Real T>
Var<T> image_backbone(Var<T> image, const ImageBranch<T>& params) {
  Tape<T>& t = *image.tape;
  Var<T> x = image;
  if (params.precomputed) return x;
  for (const auto& layer : params.backbone) {
    x = relu(conv2d(x, t.param(layer.kernel), opt(t.param(layer.bias)), 1, Padding::same));
    x = maxpool2d(x, 2, 2);
  }
  return x;
}

template <Real T>
ImageOutput<T> image_branch(Tape<T>& tape, const Tensor<T>* image, const ImageBranch<T>& params,
                            bool use_attention) {
  const Shape map = params.map_shape();
  if (!image) return {tape.constant(Tensor<T>({params.width()}, T{0})), std::nullopt, map};
  if (image->shape() != params.input_shape) {
    throw DimensionError("image: expected " + shape_str(params.input_shape) + ", got " + shape_str(image->shape()));
  }
  Var<T> z = image_backbone(tape.constant_ref(*image), params);
  if (!use_attention) return {global_avg_pool(z), std::nullopt, map};
  ScseGates<T> gates = scse_gates(z, params.scse);
  return {global_avg_pool(apply_scse(z, gates)), gates, map};
}

#define MMFUSE_INSTANTIATE(T)                                                                                  \
  template struct HashtagBranch<T>;                                                                            \
  template struct GruParams<T>;                                                                                \
  template struct TextBranch<T>;                                                                               \
  template struct ScseParams<T>;                                                                               \
  template struct ImageBranch<T>;                                                                              \
  template Var<T> hashtag_hidden(Var<T>, const HashtagBranch<T>&);                                             \
  template BranchOutput<T> hashtag_branch(Tape<T>&, std::span<const WordRef>, const EmbeddingTable<T>&,        \
                                          const HashtagBranch<T>&, bool);                                      \
  template Var<T> gru_cell(Var<T>, Var<T>, const GruParams<T>&);                                               \
  template Var<T> bigru_encode(Var<T>, const Mask&, const BiGru<T>&);                                          \
  template BranchOutput<T> text_branch(Tape<T>&, std::span<const WordRef>, const EmbeddingTable<T>&,           \
                                       const TextBranch<T>&, bool);                                            \
  template ScseGates<T> scse_gates(Var<T>, const ScseParams<T>&);                                              \
  template Var<T> apply_scse(Var<T>, const ScseGates<T>&);                                                     \
  template Var<T> image_backbone(Var<T>, const ImageBranch<T>&);                                               \
  template ImageOutput<T> image_branch(Tape<T>&, const Tensor<T>*, const ImageBranch<T>&, bool);

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)

}  // namespace mmfuse
