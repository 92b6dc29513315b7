// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "mmfuse/autodiff.hpp"

namespace mmfuse {

/// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <Real T>
Parameter<T> glorot(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Parameter<T> p{std::move(name), Tensor<T>(std::move(shape)), true};
  if (fan_in + fan_out == 0) return p;
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  for (auto& v : p.value.values()) v = static_cast<T>(u(rng));
  return p;
}

/// Dense weight [out x in].
template <Real T>
Parameter<T> glorot(std::string name, std::size_t out, std::size_t in, Rng& rng) {
  return glorot<T>(std::move(name), Shape{out, in}, in, out, rng);
}

template <Real T>
Parameter<T> zeros(std::string name, Shape shape, bool trainable = true) {
  return Parameter<T>{std::move(name), Tensor<T>(std::move(shape)), trainable};
}

}  // namespace mmfuse
