// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/checkpoint.hpp"

#include <fstream>
#include <map>

#include "mmfuse/errors.hpp"
#include "mmfuse/tensor_io.hpp"

namespace mmfuse {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

ordered_json config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["embed_dim"] = c.embed_dim;
  j["hashtag_hidden"] = c.hashtag_hidden;
  j["gru_hidden"] = c.gru_hidden;
  j["backbone"] = c.backbone;
  j["image_size"] = c.image_size;
  j["scse_ratio"] = c.scse_ratio;
  j["proj_dim"] = c.proj_dim;
  j["classifier"] = c.classifier;
  j["max_hashtags"] = c.max_hashtags;
  j["max_text"] = c.max_text;
  j["vocab_max"] = c.vocab_max;
  j["buckets"] = c.buckets;
  j["dropout"] = c.dropout;
  j["bn_momentum"] = c.bn_momentum;
  j["bn_eps"] = c.bn_eps;
  j["train_embeddings"] = c.train_embeddings;
  j["fusion_anchor"] = c.fusion_anchor;
  j["zero_init_scse"] = c.zero_init_scse;
  j["feature_map"] = c.feature_map;
  j["anchor_hashtags"] = c.anchor_hashtags;
  j["modalities"] = c.modalities.str();
  j["no_fusion"] = c.ablations.no_fusion;
  j["no_projection"] = c.ablations.no_projection;
  j["no_attention"] = c.ablations.no_attention;
  j["no_ocr"] = c.ablations.no_ocr;
  return j;
}

ModelConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "embed_dim") c.embed_dim = v.get<std::size_t>();
      else if (key == "hashtag_hidden") c.hashtag_hidden = v.get<std::size_t>();
      else if (key == "gru_hidden") c.gru_hidden = v.get<std::size_t>();
      else if (key == "backbone") c.backbone = v.get<std::vector<std::size_t>>();
      else if (key == "image_size") c.image_size = v.get<std::size_t>();
      else if (key == "scse_ratio") c.scse_ratio = v.get<std::size_t>();
      else if (key == "proj_dim") c.proj_dim = v.get<std::size_t>();
      else if (key == "classifier") c.classifier = v.get<std::vector<std::size_t>>();
      else if (key == "max_hashtags") c.max_hashtags = v.get<std::size_t>();
      else if (key == "max_text") c.max_text = v.get<std::size_t>();
      else if (key == "vocab_max") c.vocab_max = v.get<std::size_t>();
      else if (key == "buckets") c.buckets = v.get<std::size_t>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "bn_momentum") c.bn_momentum = v.get<double>();
      else if (key == "bn_eps") c.bn_eps = v.get<double>();
      else if (key == "train_embeddings") c.train_embeddings = v.get<bool>();
      else if (key == "fusion_anchor") c.fusion_anchor = v.get<bool>();
      else if (key == "zero_init_scse") c.zero_init_scse = v.get<bool>();
      else if (key == "feature_map") c.feature_map = v.get<Shape>();
      else if (key == "anchor_hashtags") c.anchor_hashtags = v.get<std::vector<std::string>>();
      else if (key == "modalities") c.modalities = ModalitySet::parse(v.get<std::string>());
      else if (key == "no_fusion") c.ablations.no_fusion = v.get<bool>();
      else if (key == "no_projection") c.ablations.no_projection = v.get<bool>();
      else if (key == "no_attention") c.ablations.no_attention = v.get<bool>();
      else if (key == "no_ocr") c.ablations.no_ocr = v.get<bool>();
      else throw ConfigError("unknown model config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("model config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

namespace {

template <Real T>
std::vector<std::pair<std::string, const Tensor<T>*>> state_tensors(const Model<T>& m) {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (const auto* p : m.parameters()) out.emplace_back(p->name, &p->value);
  for (std::size_t k = 0; k < m.dense.size(); ++k) {
    const std::string name = "classifier." + std::to_string(k);
    out.emplace_back(name + ".running_mean", &m.dense[k].bn.running_mean);
    out.emplace_back(name + ".running_var", &m.dense[k].bn.running_var);
  }
  out.emplace_back("anchor", &m.anchor.value);
  if (m.hashtag.seta.anchor) out.emplace_back("hashtag.seta.anchor", &*m.hashtag.seta.anchor);
  if (m.text.seta.anchor) out.emplace_back("text.seta.anchor", &*m.text.seta.anchor);
  if (m.fusion.anchor) out.emplace_back("fusion.seta.anchor", &*m.fusion.anchor);
  return out;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 15];
  return s;
}

}  // namespace

template <Real T>
void save_checkpoint(const fs::path& dir, const Model<T>& model, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(dir / "tensors", ec);
  if (ec) throw DataError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());

  ordered_json manifest;
  manifest["format"] = "mmfuse-checkpoint-1";
  manifest["seed"] = seed;
  manifest["precision"] = "f32";
  manifest["vocab_size"] = model.embed.vocab.size();
  manifest["vocab_hash"] = hex64(model.embed.vocab.hash());
  manifest["anchor_hashtags"] = model.anchor.source_hashtags;
  manifest["config"] = config_to_json(model.config);
  ordered_json files = ordered_json::array();
  for (const auto& [name, t] : state_tensors(model)) {
    const std::string file = "tensors/" + name + ".mmt";
    save_mmt1(dir / file, t->template cast<float>());
    files.push_back({{"name", name}, {"file", file}, {"shape", t->shape()}});
  }
  manifest["tensors"] = files;

  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
  std::ofstream vocab(dir / "vocab.txt", std::ios::binary);
  model.embed.vocab.save(vocab);
  if (!out || !vocab) throw DataError("failed writing checkpoint to " + dir.string());
}

template <Real T>
Model<T> load_checkpoint(const fs::path& dir, std::uint64_t* seed_out) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw ConfigError("no checkpoint at " + dir.string() + " (manifest.json missing)");
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("corrupt manifest in " + dir.string() + ": " + e.what());
  }
  std::ifstream vin(dir / "vocab.txt", std::ios::binary);
  if (!vin) throw ConfigError("checkpoint " + dir.string() + " has no vocab.txt");
  Vocab vocab = Vocab::load(vin);

  try {
    if (manifest.at("format") != "mmfuse-checkpoint-1") throw ConfigError("unsupported checkpoint format");
    if (manifest.at("vocab_hash").get<std::string>() != hex64(vocab.hash()))
      throw ConfigError("vocabulary of " + dir.string() + " does not match its manifest");
    const ModelConfig config = config_from_json(manifest.at("config"));
    const auto seed = manifest.at("seed").get<std::uint64_t>();
    if (seed_out) *seed_out = seed;
    Model<T> model = Model<T>::create(config, std::move(vocab), seed);

    std::map<std::string, std::string> files;
    for (const auto& e : manifest.at("tensors")) files[e.at("name").get<std::string>()] = e.at("file").get<std::string>();

    for (const auto& [name, ref] : state_tensors(model)) {
      auto it = files.find(name);
      if (it == files.end()) throw ConfigError("checkpoint " + dir.string() + " lacks tensor '" + name + "'");
      Tensor<float> t = load_mmt1(dir / it->second);
      if (t.shape() != ref->shape())
        throw ConfigError("tensor '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                          shape_str(ref->shape()));
      *const_cast<Tensor<T>*>(ref) = t.template cast<T>();
    }
    return model;
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest in " + dir.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("unreadable checkpoint tensor: ") + e.what());
  }
}

template void save_checkpoint(const fs::path&, const Model<float>&, std::uint64_t);
template void save_checkpoint(const fs::path&, const Model<double>&, std::uint64_t);
template Model<float> load_checkpoint(const fs::path&, std::uint64_t*);
template Model<double> load_checkpoint(const fs::path&, std::uint64_t*);

}  // namespace mmfuse
