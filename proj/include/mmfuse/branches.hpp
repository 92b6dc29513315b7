// SPDX-License-Identifier: Apache-2.0
#pragma once

// Single-modality encoders: hashtags, text (caption + OCR) and image.

#include <optional>
#include <span>
#include <vector>

#include "mmfuse/autodiff.hpp"
#include "mmfuse/embeddings.hpp"
#include "mmfuse/seta.hpp"

namespace mmfuse {

/// Output of one branch. `attention` is empty when the input was empty or
/// attention is disabled.
template <Real T>
struct BranchOutput {
  Var<T> feature;
  std::optional<SeTaVars<T>> attention;
  Mask mask;
};

// --- hashtags -------------------------------------------------------------

template <Real T>
struct HashtagBranch {
  Parameter<T> w;  // [d' x d]
  Parameter<T> b;  // [d']
  SeTaParams<T> seta;
  std::size_t max_hashtags = 30;

  std::size_t width() const { return w.value.dim(0); }
  std::vector<Parameter<T>*> parameters();
};

/// tanh(W e + b) for every row of `embedded` [n x d].
template <Real T>
Var<T> hashtag_hidden(Var<T> embedded, const HashtagBranch<T>& params);

/// Embeds, applies the hidden layer and attends. Tags beyond max_hashtags are
/// dropped; no tags gives a zero vector.
template <Real T>
BranchOutput<T> hashtag_branch(Tape<T>& tape, std::span<const WordRef> tags, const EmbeddingTable<T>& table,
                               const HashtagBranch<T>& params, bool uniform_attention = false);

// --- text -----------------------------------------------------------------

template <Real T>
struct GruParams {
  Parameter<T> wz, uz, bz;  // update gate: W [g x d], U [g x g], b [g]
  Parameter<T> wr, ur, br;  // reset gate
  Parameter<T> wh, uh, bh;  // candidate

  static GruParams create(const std::string& prefix, std::size_t in, std::size_t hidden, Rng& rng);
  std::size_t hidden() const { return uz.value.dim(0); }
  std::vector<Parameter<T>*> parameters() { return {&wz, &uz, &bz, &wr, &ur, &br, &wh, &uh, &bh}; }
};

/// z = s(Wz x + Uz h + bz), r = s(Wr x + Ur h + br),
/// c = tanh(Wh x + Uh (r*h) + bh), h' = (1 - z) * h + z * c
template <Real T>
Var<T> gru_cell(Var<T> x, Var<T> h, const GruParams<T>& params);

template <Real T>
struct BiGru {
  GruParams<T> fwd;
  GruParams<T> bwd;
};

/// sequence [T x d] -> [T x 2g]; row t is [h_bwd(t); h_fwd(t)]. Masked
/// steps leave the state untouched and output zeros.
template <Real T>
Var<T> bigru_encode(Var<T> sequence, const Mask& mask, const BiGru<T>& params);

template <Real T>
struct TextBranch {
  BiGru<T> gru;
  SeTaParams<T> seta;
  std::size_t max_text = 680;

  std::size_t width() const { return 2 * gru.fwd.hidden(); }
  std::vector<Parameter<T>*> parameters();
};

/// Caption tokens, then the separator, then OCR tokens (unless `use_ocr` is
/// false), truncated to `max_len`. Empty when both inputs are empty.
std::vector<std::string> text_stream(const std::vector<std::string>& caption, const std::vector<std::string>& ocr,
                                     std::size_t max_len, bool use_ocr = true);

/// `tokens` as produced by text_stream, already resolved against the table.
template <Real T>
BranchOutput<T> text_branch(Tape<T>& tape, std::span<const WordRef> tokens, const EmbeddingTable<T>& table,
                            const TextBranch<T>& params, bool uniform_attention = false);

// --- image ----------------------------------------------------------------

template <Real T>
struct ConvLayer {
  Parameter<T> kernel;  // [3 x 3 x cin x cout]
  Parameter<T> bias;    // [cout]
};

template <Real T>
struct ScseParams {
  Parameter<T> fc1_w, fc1_b;  // [c/r x c], [c/r]
  Parameter<T> fc2_w, fc2_b;  // [c x c/r], [c]
  Parameter<T> sp_w, sp_b;    // 1x1 conv c -> 1: [1 x c], [1]
  std::size_t ratio = 16;

  /// Glorot weights and zero biases, or all zeros (every gate 0.5).
  static ScseParams create(const std::string& prefix, std::size_t channels, std::size_t ratio, Rng& rng,
                           bool zero_init = false);
  std::vector<Parameter<T>*> parameters() { return {&fc1_w, &fc1_b, &fc2_w, &fc2_b, &sp_w, &sp_b}; }
};

template <Real T>
struct ScseGates {
  Var<T> channel;  // [c]
  Var<T> spatial;  // [h*w], row-major over (y, x)
};

template <Real T>
ScseGates<T> scse_gates(Var<T> z, const ScseParams<T>& params);
/// Z * channel + Z * spatial, broadcast.
template <Real T>
Var<T> apply_scse(Var<T> z, const ScseGates<T>& gates);

template <Real T>
struct ImageBranch {
  std::vector<ConvLayer<T>> backbone;  // conv3x3 same + relu + maxpool 2x2 each
  ScseParams<T> scse;
  Shape input_shape;  // [H x W x 3], or the feature-map shape with precomputed features
  bool precomputed = false;

  std::size_t width() const { return scse.fc2_b.value.dim(0); }
  /// Shape of Z_V.
  Shape map_shape() const;
  std::vector<Parameter<T>*> parameters();
};

template <Real T>
struct ImageOutput {
  Var<T> feature;
  std::optional<ScseGates<T>> gates;
  Shape map_shape;
};

/// Backbone output Z_V for an image (identity with precomputed features).
template <Real T>
Var<T> image_backbone(Var<T> image, const ImageBranch<T>& params);

/// image: the network input; nullptr gives a zero feature.
template <Real T>
ImageOutput<T> image_branch(Tape<T>& tape, const Tensor<T>* image, const ImageBranch<T>& params,
                            bool use_attention = true);

}  // namespace mmfuse
