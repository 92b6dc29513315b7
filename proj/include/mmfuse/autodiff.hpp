// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode differentiation over a linear tape.
//
// Nodes are appended in evaluation order, so the tape index order is a
// topological order and backward() is a single reverse sweep that visits each
// node once. A tape is confined to one thread; parameters are only read
// through it, so several tapes may share one frozen parameter set.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

enum class Mode { train, infer };

using Rng = std::mt19937_64;
using Mask = std::vector<bool>;

template <Real T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool trainable = true;
};

template <Real T>
class Tape;

/// Handle to a node on a tape.
template <Real T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Gradients of a scalar loss with respect to the parameters it touched.
template <Real T>
class GradientMap {
 public:
  /// nullptr when the parameter did not take part in the loss.
  const Tensor<T>* find(const Parameter<T>& p) const;
  /// The gradient, or zeros shaped like the parameter when unused.
  Tensor<T> of(const Parameter<T>& p) const;
  std::size_t size() const { return grads_.size(); }

  void set(const Parameter<T>& p, Tensor<T> g) { grads_.insert_or_assign(&p, std::move(g)); }

 private:
  std::unordered_map<const Parameter<T>*, Tensor<T>> grads_;
};

template <Real T>
class Tape {
 public:
  /// Called during backward with the gradient of the node's output and its
  /// forward value. Accumulates into inputs via grad_slot().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& dout, const Tensor<T>& out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Leaf referencing an external tensor that must outlive the tape.
  Var<T> constant_ref(const Tensor<T>& value);
  /// Leaf for a parameter. Registered once per tape; repeated calls return
  /// the same node.
  Var<T> param(const Parameter<T>& p);

  /// Append an op node. `fn` may be empty for non-differentiable ops.
  Var<T> push(const char* op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn fn);

  const Tensor<T>& value(Var<T> v) const { return value(v.id); }
  const Tensor<T>& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  const char* op_name(Var<T> v) const { return nodes_[v.id].op; }

  /// Gradient accumulator of `v`, allocated on first use; nullptr when `v`
  /// does not require a gradient. Only meaningful inside backward().
  Tensor<T>* grad_slot(Var<T> v);

  /// Reverse sweep from a scalar loss. Throws DimensionError for a
  /// non-scalar loss and NumericError for non-finite gradients.
  GradientMap<T> backward(Var<T> loss);

 private:
  struct Node {
    const char* op = "";
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    const Parameter<T>* param = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var<T> make(Node node);

  bool grad_enabled_;
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
  std::vector<bool> has_grad_;
  std::unordered_map<const Parameter<T>*, std::size_t> param_nodes_;
};

template <Real T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

// --- elementwise ----------------------------------------------------------

template <Real T> Var<T> add(Var<T> a, Var<T> b);
template <Real T> Var<T> sub(Var<T> a, Var<T> b);
template <Real T> Var<T> mul(Var<T> a, Var<T> b);
template <Real T> Var<T> scale(Var<T> a, T c);

enum class Activation { sigmoid, tanh, relu };
template <Real T> Var<T> activation(Var<T> x, Activation kind);
template <Real T> Var<T> sigmoid(Var<T> x) { return activation(x, Activation::sigmoid); }
template <Real T> Var<T> tanh(Var<T> x) { return activation(x, Activation::tanh); }
template <Real T> Var<T> relu(Var<T> x) { return activation(x, Activation::relu); }

// --- linear algebra -------------------------------------------------------

/// [m x k] * [k x n]
template <Real T> Var<T> matmul(Var<T> a, Var<T> b);
/// x * W^T + b for x of shape [in] or [n x in], W of shape [out x in].
template <Real T> Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> b);
/// [n x k] * [k] -> [n]
template <Real T> Var<T> matvec(Var<T> m, Var<T> v);
/// Inner product of two same-shape tensors -> scalar.
template <Real T> Var<T> dot(Var<T> a, Var<T> b);
/// sum_i w[i] * items[i, :]  for items [n x d], w [n] -> [d]
template <Real T> Var<T> weighted_sum(Var<T> items, Var<T> w);
/// X[i, j] * v[j]
template <Real T> Var<T> scale_columns(Var<T> x, Var<T> v);
/// X[i, j] * v[i]
template <Real T> Var<T> scale_rows(Var<T> x, Var<T> v);

// --- reductions and shape -------------------------------------------------

template <Real T> Var<T> sum(Var<T> x);
template <Real T> Var<T> mean(Var<T> x);
template <Real T> Var<T> reshape(Var<T> x, Shape shape);
/// Row i of a rank-2 tensor.
template <Real T> Var<T> row(Var<T> x, std::size_t i);
/// Stack k same-shape rank-1 tensors into [k x m].
template <Real T> Var<T> stack(const std::vector<Var<T>>& rows);
/// Concatenate rank-1 tensors.
template <Real T> Var<T> concat(const std::vector<Var<T>>& parts);
/// Zero-pad a rank-1 tensor to `width`.
template <Real T> Var<T> pad_to(Var<T> x, std::size_t width);

// --- attention and normalization -----------------------------------------

/// Softmax over the positions where mask is true; other entries are exactly
/// zero. Throws InvalidMaskError when no position is valid.
template <Real T> Var<T> masked_softmax(Var<T> logits, const Mask& mask);

template <Real T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);
};

/// x: [B x D]. Train mode uses batch statistics (B >= 2) and updates the
/// running statistics; infer mode uses the running statistics.
template <Real T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode);
/// Infer mode on read-only statistics.
template <Real T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, const BatchNormState<T>& state);

/// Inverted dropout. Identity in infer mode or when rate == 0.
template <Real T> Var<T> dropout(Var<T> x, T rate, Mode mode, Rng& rng);

// --- convolution ----------------------------------------------------------

enum class Padding { valid, same };

/// Cross-correlation of x [H x W x Cin] with k [kh x kw x Cin x Cout].
template <Real T>
Var<T> conv2d(Var<T> x, Var<T> k, std::optional<Var<T>> bias, std::size_t stride, Padding padding);
template <Real T> Var<T> maxpool2d(Var<T> x, std::size_t size, std::size_t stride);
/// [H x W x C] -> [C]
template <Real T> Var<T> global_avg_pool(Var<T> x);

// --- loss -----------------------------------------------------------------

/// Mean binary cross-entropy of sigmoid(logits) against labels in {0, 1}.
template <Real T> Var<T> sigmoid_bce(Var<T> logits, const std::vector<T>& labels);

}  // namespace mmfuse
