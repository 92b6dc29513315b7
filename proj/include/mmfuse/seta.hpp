// SPDX-License-Identifier: Apache-2.0
#pragma once

// Semantic + task attention over a set of items.
//
//   u_i = tanh(W1 h_i + b1),   semantic_i = u_i . ctx
//   v_i = tanh(W2 h_i + b2),   task_i     = v_i . anchor   (0 without anchor)
//   weights = masked_softmax(semantic + task)
//   output  = sum_i weights_i h_i

#include <optional>
#include <string>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse {

template <Real T>
struct SeTaParams {
  Parameter<T> w1;   // [a x d_in]
  Parameter<T> b1;   // [a]
  Parameter<T> ctx;  // [a]
  Parameter<T> w2;   // [d_anchor x d_in], [0 x d_in] without anchor
  Parameter<T> b2;   // [d_anchor]
  std::optional<Tensor<T>> anchor;  // frozen

  /// Glorot weights, zero biases. `anchor` fixes d_anchor when given.
  static SeTaParams create(const std::string& prefix, std::size_t d_in, std::size_t a,
                           std::optional<Tensor<T>> anchor, Rng& rng);

  std::size_t input_width() const { return w1.value.dim(1); }
  std::vector<Parameter<T>*> parameters() { return {&w1, &b1, &ctx, &w2, &b2}; }
  std::vector<const Parameter<T>*> parameters() const { return {&w1, &b1, &ctx, &w2, &b2}; }
};

/// Tape nodes of one attention evaluation.
template <Real T>
struct SeTaVars {
  Var<T> semantic;
  Var<T> task;
  Var<T> combined;
  Var<T> weights;
};

/// Plain values of one attention evaluation.
template <Real T>
struct SeTaScores {
  Tensor<T> semantic;
  Tensor<T> task;
  Tensor<T> combined;
  Tensor<T> weights;
  Mask mask;

  static SeTaScores from(const SeTaVars<T>& v, Mask mask) {
    return {v.semantic.value(), v.task.value(), v.combined.value(), v.weights.value(), std::move(mask)};
  }
};

/// items: [n x d_in] -> [n]
template <Real T>
Var<T> semantic_scores(Var<T> items, const SeTaParams<T>& params);
template <Real T>
Var<T> task_scores(Var<T> items, const SeTaParams<T>& params);
template <Real T>
SeTaVars<T> seta_weights(Var<T> items, const Mask& mask, const SeTaParams<T>& params);
/// Weighted sum of the rows of `items`.
template <Real T>
Var<T> attend(Var<T> items, Var<T> weights);

/// 1/k on the k valid positions, as a constant node.
template <Real T>
Var<T> uniform_weights(Tape<T>& tape, const Mask& mask);

}  // namespace mmfuse
