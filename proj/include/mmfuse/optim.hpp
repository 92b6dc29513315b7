// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "mmfuse/autodiff.hpp"

namespace mmfuse {

/// RMSprop with per-parameter squared-gradient averages keyed by parameter name.
///
///   v <- decay * v + (1 - decay) * g^2
///   p <- p - lr * g / (sqrt(v) + eps)
template <Real T>
class RmsProp {
 public:
  RmsProp(T lr, T decay = T(0.9), T eps = T(1e-8));

  /// Creates zeroed state for every trainable parameter. Names must be unique.
  void init(const std::vector<Parameter<T>*>& params);

  /// One update. Parameters absent from `grads` see a zero gradient. Throws
  /// ConsistencyError when a trainable parameter has no state.
  void step(const std::vector<Parameter<T>*>& params, const GradientMap<T>& grads);

  T learning_rate() const { return lr_; }
  const Tensor<T>* state(const std::string& name) const;

 private:
  T lr_;
  T decay_;
  T eps_;
  std::unordered_map<std::string, Tensor<T>> avg_;
};

extern template class RmsProp<float>;
extern template class RmsProp<double>;

}  // namespace mmfuse
