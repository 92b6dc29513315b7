// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/optim.hpp"

#include <cmath>

#include "mmfuse/errors.hpp"

namespace mmfuse {

template <Real T>
RmsProp<T>::RmsProp(T lr, T decay, T eps) : lr_(lr), decay_(decay), eps_(eps) {
  if (!(lr >= T{0}) || !(lr < T{1})) throw ConfigError("rmsprop: learning rate must lie in [0, 1)");
  if (!(decay >= T{0}) || !(decay < T{1})) throw ConfigError("rmsprop: decay must lie in [0, 1)");
  if (!(eps > T{0})) throw ConfigError("rmsprop: eps must be positive");
}

template <Real T>
void RmsProp<T>::init(const std::vector<Parameter<T>*>& params) {
  avg_.clear();
  for (const auto* p : params) {
    if (!p->trainable) continue;
    auto [it, inserted] = avg_.emplace(p->name, Tensor<T>(p->value.shape(), T{0}));
    if (!inserted) throw ConsistencyError("rmsprop: duplicate parameter name " + p->name);
  }
}

template <Real T>
void RmsProp<T>::step(const std::vector<Parameter<T>*>& params, const GradientMap<T>& grads) {
  for (auto* p : params) {
    if (!p->trainable) continue;
    auto it = avg_.find(p->name);
    if (it == avg_.end()) throw ConsistencyError("rmsprop: no state for parameter " + p->name);
    Tensor<T>& v = it->second;
    if (v.shape() != p->value.shape()) {
      throw ConsistencyError("rmsprop: state shape " + shape_str(v.shape()) + " differs from parameter " +
                             p->name + " " + shape_str(p->value.shape()));
    }
    const Tensor<T>* g = grads.find(*p);
    if (!g) {
      for (auto& x : v.values()) x *= decay_;
      continue;
    }
    for (std::size_t i = 0; i < v.size(); ++i) {
      const T gi = (*g)[i];
      v[i] = decay_ * v[i] + (T{1} - decay_) * gi * gi;
      p->value[i] -= lr_ * gi / (std::sqrt(v[i]) + eps_);
    }
  }
}

template <Real T>
const Tensor<T>* RmsProp<T>::state(const std::string& name) const {
  auto it = avg_.find(name);
  return it == avg_.end() ? nullptr : &it->second;
}

template class RmsProp<float>;
template class RmsProp<double>;

}  // namespace mmfuse
