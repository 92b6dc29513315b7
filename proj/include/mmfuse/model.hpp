// SPDX-License-Identifier: Apache-2.0
#pragma once

// The three-branch classifier: hashtag, text and image encoders, per-modality
// projection, attention-weighted fusion, concatenation and a dense
// classifier head.

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/branches.hpp"
#include "mmfuse/data.hpp"
#include "mmfuse/embeddings.hpp"
#include "mmfuse/seta.hpp"

namespace mmfuse {

enum class Modality { hashtag = 0, text = 1, image = 2 };

/// "tag"/"hashtag", "caption"/"text", "image"; ConfigError otherwise.
Modality parse_modality(const std::string& name);
const char* modality_name(Modality m);

struct ModalitySet {
  bool hashtag = true;
  bool text = true;
  bool image = true;

  bool has(Modality m) const;
  std::size_t count() const { return hashtag + text + image; }
  /// Comma-separated names, e.g. "image,caption".
  static ModalitySet parse(const std::string& list);
  std::string str() const;
  bool operator==(const ModalitySet&) const = default;
};

struct Ablations {
  bool no_fusion = false;
  bool no_projection = false;
  bool no_attention = false;
  bool no_ocr = false;
  bool operator==(const Ablations&) const = default;
};

struct ModelConfig {
  std::size_t embed_dim = 16;       // d
  std::size_t hashtag_hidden = 16;  // d'
  std::size_t gru_hidden = 16;      // g
  std::vector<std::size_t> backbone{8, 8, 8};
  std::size_t image_size = 32;
  std::size_t scse_ratio = 4;
  std::size_t proj_dim = 32;  // p
  std::vector<std::size_t> classifier{32, 16, 8};
  std::size_t max_hashtags = 30;
  std::size_t max_text = 680;
  std::size_t vocab_max = 4096;
  std::size_t buckets = 2048;
  double dropout = 0.5;
  double bn_momentum = 0.9;
  double bn_eps = 1e-5;
  bool train_embeddings = false;
  bool fusion_anchor = false;
  bool zero_init_scse = false;
  Shape feature_map;  // non-empty: images are precomputed [h x w x c] maps
  std::vector<std::string> anchor_hashtags;  // empty: the default list
  ModalitySet modalities;
  Ablations ablations;

  /// Small widths for CPU experiments.
  static ModelConfig desk();
  /// 224x224 input, five backbone stages to a 7x7x512 map, ratio 16,
  /// classifier 256/128/64.
  static ModelConfig full();

  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  bool fusion_active() const { return !ablations.no_fusion && modalities.count() >= 2; }
  std::size_t image_width() const;
  Shape image_input_shape() const;
  Shape image_map_shape() const;
  /// Width of one fused feature.
  std::size_t fused_width() const;
  /// Width of the concatenated classifier input.
  std::size_t comprehensive_width() const;
};

/// Ablation-table row names: three-branch, ours_noF, ours_noP, ours_noAtt,
/// ours_noOCR, image_only, caption_only, tag_only, image+caption, image+tag,
/// caption+tag.
const std::vector<std::string>& variant_names();
/// Sets modalities and ablation flags for a named row; ConfigError if unknown.
void apply_variant(ModelConfig& config, const std::string& name);

template <Real T>
struct DenseBn {
  Parameter<T> w, b, gamma, beta;
  BatchNormState<T> bn;
};

template <Real T>
struct Model {
  ModelConfig config;
  EmbeddingTable<T> embed;
  AnchorVector<T> anchor;
  HashtagBranch<T> hashtag;
  TextBranch<T> text;
  ImageBranch<T> image;
  std::array<Parameter<T>, 3> proj_w;  // indexed by Modality
  std::array<Parameter<T>, 3> proj_b;
  SeTaParams<T> fusion;
  std::vector<DenseBn<T>> dense;
  Parameter<T> out_w, out_b;

  /// Deterministic in (config, vocab, seed).
  static Model create(const ModelConfig& config, Vocab vocab, std::uint64_t seed);

  /// Parameters of the active components (frozen ones included).
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  /// Trainable subset of parameters().
  std::vector<Parameter<T>*> trainable();

  /// Same architecture and values in another precision.
  template <Real U>
  Model<U> cast() const;
};

/// A post resolved against a model's vocabulary and modalities.
template <Real T>
struct EncodedPost {
  std::vector<std::string> hashtag_words;
  std::vector<WordRef> hashtags;
  std::vector<std::string> tokens;
  std::vector<WordRef> text;
  std::shared_ptr<const Tensor<T>> image;
};

template <Real T>
EncodedPost<T> encode_post(const Post& post, const Model<T>& model);
template <Real T>
std::vector<EncodedPost<T>> encode_dataset(const Dataset& data, const Model<T>& model);

/// Intermediate tape nodes of one sample.
template <Real T>
struct SampleTrace {
  std::optional<SeTaVars<T>> hashtag, text, fusion;
  Mask fusion_mask;
  std::optional<ScseGates<T>> gates;
  Shape map_shape;
};

/// ReLU(W_m f + b_m)
template <Real T>
Var<T> project(Var<T> feature, Modality m, const Model<T>& model);

/// Attention-weighted combination of same-width modality features.
template <Real T>
Var<T> fuse(const std::vector<Var<T>>& features, const SeTaParams<T>& params, bool uniform,
            std::optional<SeTaVars<T>>* trace = nullptr);

/// Concatenation of the listed parts in order.
template <Real T>
Var<T> comprehensive(const std::vector<Var<T>>& parts);

/// Comprehensive feature of one post.
template <Real T>
Var<T> post_features(Tape<T>& tape, const Model<T>& model, const EncodedPost<T>& post,
                     SampleTrace<T>* trace = nullptr);

/// Classifier head on [B x width] -> logits [B]. Train mode updates the
/// batchnorm statistics and applies dropout.
template <Real T>
Var<T> classifier_logits(Var<T> x, Model<T>& model, Mode mode, Rng& rng);
template <Real T>
Var<T> classifier_logits(Var<T> x, const Model<T>& model);

/// Logits for a batch of posts.
template <Real T>
Var<T> batch_logits(Tape<T>& tape, Model<T>& model, const std::vector<const EncodedPost<T>*>& batch, Mode mode,
                    Rng& rng);
template <Real T>
Var<T> batch_logits(Tape<T>& tape, const Model<T>& model, const std::vector<const EncodedPost<T>*>& batch,
                    std::vector<SampleTrace<T>>* traces = nullptr);

/// Cross-entropy of one probability, clamped to [1e-7, 1 - 1e-7].
double bce_loss(double p, int y);
double mean_bce_loss(const std::vector<double>& p, const std::vector<int>& y);

struct AttentionDump {
  std::string id;
  double probability = 0;
  std::vector<std::string> hashtags;
  std::vector<double> hashtag_weights;
  std::vector<std::string> tokens;
  std::vector<double> text_weights;
  std::vector<std::string> fusion_modalities;
  std::vector<double> fusion_weights;
  std::vector<double> channel_gates;
  std::vector<double> spatial_gates;  // row-major [h x w]
  Shape gate_shape;
};

/// Infer-mode probability of one post with its attention weights.
template <Real T>
AttentionDump forward_full(const Post& post, const Model<T>& model);
std::string attention_json(const AttentionDump& dump);

}  // namespace mmfuse
