// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/seta.hpp"

#include <algorithm>

#include "mmfuse/errors.hpp"
#include "mmfuse/init.hpp"

namespace mmfuse {

template <Real T>
SeTaParams<T> SeTaParams<T>::create(const std::string& prefix, std::size_t d_in, std::size_t a,
                                    std::optional<Tensor<T>> anchor, Rng& rng) {
  if (anchor && anchor->rank() != 1) throw DimensionError("seta: anchor must be a vector");
  const std::size_t da = anchor ? anchor->dim(0) : 0;
  SeTaParams p;
  p.w1 = glorot<T>(prefix + ".w1", a, d_in, rng);
  p.b1 = zeros<T>(prefix + ".b1", {a});
  p.ctx = glorot<T>(prefix + ".ctx", Shape{a}, a, 1, rng);
  p.w2 = glorot<T>(prefix + ".w2", da, d_in, rng);
  p.b2 = zeros<T>(prefix + ".b2", {da});
  p.anchor = std::move(anchor);
  return p;
}

template <Real T>
Var<T> semantic_scores(Var<T> items, const SeTaParams<T>& params) {
  Tape<T>& t = *items.tape;
  Var<T> u = tanh(linear(items, t.param(params.w1), std::optional<Var<T>>(t.param(params.b1))));
  return matvec(u, t.param(params.ctx));
}

template <Real T>
Var<T> task_scores(Var<T> items, const SeTaParams<T>& params) {
  Tape<T>& t = *items.tape;
  const auto& iv = items.value();
  if (iv.rank() != 2) throw DimensionError("task_scores: items must be [n x d], got " + shape_str(iv.shape()));
  if (!params.anchor) return t.constant(Tensor<T>({iv.dim(0)}, T{0}));
  if (params.anchor->dim(0) != params.w2.value.dim(0)) {
    throw DimensionError("task_scores: anchor width " + std::to_string(params.anchor->dim(0)) +
                         " differs from projection width " + std::to_string(params.w2.value.dim(0)));
  }
  Var<T> v = tanh(linear(items, t.param(params.w2), std::optional<Var<T>>(t.param(params.b2))));
  return matvec(v, t.constant_ref(*params.anchor));
}

template <Real T>
SeTaVars<T> seta_weights(Var<T> items, const Mask& mask, const SeTaParams<T>& params) {
  SeTaVars<T> out;
  out.semantic = semantic_scores(items, params);
  out.task = task_scores(items, params);
  out.combined = add(out.semantic, out.task);
  out.weights = masked_softmax(out.combined, mask);
  return out;
}

template <Real T>
Var<T> attend(Var<T> items, Var<T> weights) {
  return weighted_sum(items, weights);
}

template <Real T>
Var<T> uniform_weights(Tape<T>& tape, const Mask& mask) {
  const auto k = std::count(mask.begin(), mask.end(), true);
  if (k == 0) throw InvalidMaskError("uniform_weights: no valid position");
  Tensor<T> w({mask.size()}, T{0});
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) w[i] = T{1} / static_cast<T>(k);
  return tape.constant(std::move(w));
}

#define MMFUSE_INSTANTIATE(T)                                                   \
  template struct SeTaParams<T>;                                                \
  template Var<T> semantic_scores(Var<T>, const SeTaParams<T>&);                \
  template Var<T> task_scores(Var<T>, const SeTaParams<T>&);                    \
  template SeTaVars<T> seta_weights(Var<T>, const Mask&, const SeTaParams<T>&); \
  template Var<T> attend(Var<T>, Var<T>);                                       \
  template Var<T> uniform_weights(Tape<T>&, const Mask&);

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)

}  // namespace mmfuse
