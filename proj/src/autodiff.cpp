// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mmfuse/errors.hpp"
#include "mmfuse/simd.hpp"

namespace mmfuse {

// --- GradientMap ----------------------------------------------------------

template <Real T>
const Tensor<T>* GradientMap<T>::find(const Parameter<T>& p) const {
  auto it = grads_.find(&p);
  return it == grads_.end() ? nullptr : &it->second;
}

template <Real T>
Tensor<T> GradientMap<T>::of(const Parameter<T>& p) const {
  if (const auto* g = find(p)) return *g;
  return Tensor<T>(p.value.shape(), T{0});
}

// --- Tape -----------------------------------------------------------------

template <Real T>
Var<T> Tape<T>::make(Node node) {
  nodes_.push_back(std::move(node));
  return Var<T>{this, nodes_.size() - 1};
}

template <Real T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return make(std::move(n));
}

template <Real T>
Var<T> Tape<T>::constant_ref(const Tensor<T>& value) {
  Node n;
  n.op = "constant";
  n.external = &value;
  return make(std::move(n));
}

template <Real T>
Var<T> Tape<T>::param(const Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>{this, it->second};
  Node n;
  n.op = "param";
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_ && p.trainable;
  Var<T> v = make(std::move(n));
  param_nodes_.emplace(&p, v.id);
  return v;
}

template <Real T>
Var<T> Tape<T>::push(const char* op, Tensor<T> value, std::vector<Var<T>> inputs, BackwardFn fn) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (grad_enabled_ && fn) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                  [this](Var<T> v) { return nodes_[v.id].requires_grad; });
  }
  if (n.requires_grad) n.backward = std::move(fn);
  return make(std::move(n));
}

template <Real T>
Tensor<T>* Tape<T>::grad_slot(Var<T> v) {
  if (!nodes_[v.id].requires_grad) return nullptr;
  if (!has_grad_[v.id]) {
    grads_[v.id] = Tensor<T>(value(v).shape(), T{0});
    has_grad_[v.id] = true;
  }
  return &grads_[v.id];
}

template <Real T>
GradientMap<T> Tape<T>::backward(Var<T> loss) {
  if (value(loss).size() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_str(value(loss).shape()));
  }
  grads_.assign(nodes_.size(), Tensor<T>());
  has_grad_.assign(nodes_.size(), false);
  GradientMap<T> out;
  if (!nodes_[loss.id].requires_grad) return out;
  grad_slot(loss)->fill(T{1});
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!has_grad_[id] || !n.backward) continue;
    n.backward(*this, grads_[id], value(id));
  }
  for (const auto& [p, id] : param_nodes_) {
    if (!has_grad_[id]) continue;
    if (!grads_[id].all_finite()) throw NumericError("non-finite gradient for parameter " + p->name);
    out.set(*p, std::move(grads_[id]));
  }
  return out;
}

namespace {

template <Real T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <Real T>
void require_rank(const char* op, const Tensor<T>& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

template <Real T>
T stable_sigmoid(T z) {
  if (z >= 0) return T{1} / (T{1} + std::exp(-z));
  const T e = std::exp(z);
  return e / (T{1} + e);
}

}  // namespace

// --- elementwise ----------------------------------------------------------

template <Real T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("add", av, bv);
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->push("add", std::move(out), {a, b},
                      [a, b](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        for (Var<T> v : {a, b})
                          if (auto* g = t.grad_slot(v))
                            for (std::size_t i = 0; i < d.size(); ++i) (*g)[i] += d[i];
                      });
}

template <Real T>
Var<T> sub(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("sub", av, bv);
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->push("sub", std::move(out), {a, b},
                      [a, b](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(a))
                          for (std::size_t i = 0; i < d.size(); ++i) (*g)[i] += d[i];
                        if (auto* g = t.grad_slot(b))
                          for (std::size_t i = 0; i < d.size(); ++i) (*g)[i] -= d[i];
                      });
}

template <Real T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("mul", av, bv);
  Tensor<T> out = av;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape->push("mul", std::move(out), {a, b},
                      [a, b](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        const auto& av = t.value(a);
                        const auto& bv = t.value(b);
                        if (auto* g = t.grad_slot(a))
                          for (std::size_t i = 0; i < d.size(); ++i) (*g)[i] += d[i] * bv[i];
                        if (auto* g = t.grad_slot(b))
                          for (std::size_t i = 0; i < d.size(); ++i) (*g)[i] += d[i] * av[i];
                      });
}

template <Real T>
Var<T> scale(Var<T> a, T c) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= c;
  return a.tape->push("scale", std::move(out), {a},
                      [a, c](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(a))
                          for (std::size_t i = 0; i < d.size(); ++i) (*g)[i] += c * d[i];
                      });
}

template <Real T>
Var<T> activation(Var<T> x, Activation kind) {
  Tensor<T> out = x.value();
  switch (kind) {
    case Activation::sigmoid:
      for (auto& v : out.values()) v = stable_sigmoid(v);
      break;
    case Activation::tanh:
      for (auto& v : out.values()) v = std::tanh(v);
      break;
    case Activation::relu:
      for (auto& v : out.values()) v = v > T{0} ? v : T{0};
      break;
  }
  static constexpr const char* names[] = {"sigmoid", "tanh", "relu"};
  return x.tape->push(names[static_cast<int>(kind)], std::move(out), {x},
                      [x, kind](Tape<T>& t, const Tensor<T>& d, const Tensor<T>& y) {
                        auto* g = t.grad_slot(x);
                        if (!g) return;
                        for (std::size_t i = 0; i < d.size(); ++i) {
                          T dy = 0;
                          switch (kind) {
                            case Activation::sigmoid: dy = y[i] * (T{1} - y[i]); break;
                            case Activation::tanh: dy = T{1} - y[i] * y[i]; break;
                            case Activation::relu: dy = y[i] > T{0} ? T{1} : T{0}; break;
                          }
                          (*g)[i] += d[i] * dy;
                        }
                      });
}

// --- linear algebra -------------------------------------------------------

template <Real T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_rank("matmul", av, 2);
  require_rank("matmul", bv, 2);
  if (av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: inner extents differ, " + shape_str(av.shape()) + " * " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n}, T{0});
  simd::kernels<T>().gemm_nn(m, n, k, av.data(), bv.data(), out.data());
  return a.tape->push("matmul", std::move(out), {a, b},
                      [a, b, m, k, n](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        const auto& kern = simd::kernels<T>();
                        if (auto* g = t.grad_slot(a))
                          kern.gemm_nt(m, k, n, d.data(), t.value(b).data(), g->data());
                        if (auto* g = t.grad_slot(b))
                          kern.gemm_tn(k, n, m, t.value(a).data(), d.data(), g->data());
                      });
}

template <Real T>
Var<T> linear(Var<T> x, Var<T> w, std::optional<Var<T>> b) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  require_rank("linear", wv, 2);
  if (xv.rank() != 1 && xv.rank() != 2) {
    throw DimensionError("linear: input must be rank 1 or 2, got " + shape_str(xv.shape()));
  }
  const std::size_t in = wv.dim(1), outw = wv.dim(0);
  const std::size_t rows = xv.rank() == 1 ? 1 : xv.dim(0);
  if (xv.shape().back() != in) {
    throw DimensionError("linear: input " + shape_str(xv.shape()) + " does not match weight " +
                         shape_str(wv.shape()));
  }
  if (b && (b->value().rank() != 1 || b->value().dim(0) != outw)) {
    throw DimensionError("linear: bias " + shape_str(b->value().shape()) + " does not match weight " +
                         shape_str(wv.shape()));
  }
  Tensor<T> out(xv.rank() == 1 ? Shape{outw} : Shape{rows, outw}, T{0});
  simd::kernels<T>().gemm_nt(rows, outw, in, xv.data(), wv.data(), out.data());
  if (b) {
    const auto& bv = b->value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < outw; ++o) out[r * outw + o] += bv[o];
  }
  std::vector<Var<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  return x.tape->push(
      "linear", std::move(out), std::move(inputs),
      [x, w, b, rows, in, outw](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
        const auto& kern = simd::kernels<T>();
        if (auto* g = t.grad_slot(x)) kern.gemm_nn(rows, in, outw, d.data(), t.value(w).data(), g->data());
        if (auto* g = t.grad_slot(w)) kern.gemm_tn(outw, in, rows, d.data(), t.value(x).data(), g->data());
        if (b) {
          if (auto* g = t.grad_slot(*b))
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t o = 0; o < outw; ++o) (*g)[o] += d[r * outw + o];
        }
      });
}

template <Real T>
Var<T> matvec(Var<T> m, Var<T> v) {
  const auto& mv = m.value();
  const auto& vv = v.value();
  require_rank("matvec", mv, 2);
  require_rank("matvec", vv, 1);
  if (mv.dim(1) != vv.dim(0)) {
    throw DimensionError("matvec: " + shape_str(mv.shape()) + " * " + shape_str(vv.shape()));
  }
  const std::size_t n = mv.dim(0), k = mv.dim(1);
  Tensor<T> out({n}, T{0});
  const auto& kern = simd::kernels<T>();
  for (std::size_t i = 0; i < n; ++i) out[i] = kern.dot(mv.data() + i * k, vv.data(), k);
  return m.tape->push("matvec", std::move(out), {m, v},
                      [m, v, n, k](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        const auto& kern = simd::kernels<T>();
                        if (auto* g = t.grad_slot(m))
                          for (std::size_t i = 0; i < n; ++i)
                            kern.axpy(d[i], t.value(v).data(), g->data() + i * k, k);
                        if (auto* g = t.grad_slot(v))
                          for (std::size_t i = 0; i < n; ++i)
                            kern.axpy(d[i], t.value(m).data() + i * k, g->data(), k);
                      });
}

template <Real T>
Var<T> dot(Var<T> a, Var<T> b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  require_same_shape("dot", av, bv);
  const T s = simd::kernels<T>().dot(av.data(), bv.data(), av.size());
  return a.tape->push("dot", Tensor<T>::scalar(s), {a, b},
                      [a, b](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        const auto& kern = simd::kernels<T>();
                        const auto& av = t.value(a);
                        const auto& bv = t.value(b);
                        if (auto* g = t.grad_slot(a)) kern.axpy(d[0], bv.data(), g->data(), bv.size());
                        if (auto* g = t.grad_slot(b)) kern.axpy(d[0], av.data(), g->data(), av.size());
                      });
}

template <Real T>
Var<T> weighted_sum(Var<T> items, Var<T> w) {
  const auto& iv = items.value();
  const auto& wv = w.value();
  require_rank("weighted_sum", iv, 2);
  require_rank("weighted_sum", wv, 1);
  if (iv.dim(0) != wv.dim(0)) {
    throw DimensionError("weighted_sum: " + std::to_string(wv.dim(0)) + " weights for " +
                         std::to_string(iv.dim(0)) + " items");
  }
  const std::size_t n = iv.dim(0), d = iv.dim(1);
  Tensor<T> out({d}, T{0});
  const auto& kern = simd::kernels<T>();
  for (std::size_t i = 0; i < n; ++i) kern.axpy(wv[i], iv.data() + i * d, out.data(), d);
  return items.tape->push("weighted_sum", std::move(out), {items, w},
                          [items, w, n, d](Tape<T>& t, const Tensor<T>& dy, const Tensor<T>&) {
                            const auto& kern = simd::kernels<T>();
                            if (auto* g = t.grad_slot(items))
                              for (std::size_t i = 0; i < n; ++i)
                                kern.axpy(t.value(w)[i], dy.data(), g->data() + i * d, d);
                            if (auto* g = t.grad_slot(w))
                              for (std::size_t i = 0; i < n; ++i)
                                (*g)[i] += kern.dot(t.value(items).data() + i * d, dy.data(), d);
                          });
}

template <Real T>
Var<T> scale_columns(Var<T> x, Var<T> v) {
  const auto& xv = x.value();
  const auto& vv = v.value();
  require_rank("scale_columns", xv, 2);
  require_rank("scale_columns", vv, 1);
  if (xv.dim(1) != vv.dim(0)) {
    throw DimensionError("scale_columns: " + shape_str(xv.shape()) + " by " + shape_str(vv.shape()));
  }
  const std::size_t n = xv.dim(0), m = xv.dim(1);
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] *= vv[j];
  return x.tape->push("scale_columns", std::move(out), {x, v},
                      [x, v, n, m](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        const auto& xv = t.value(x);
                        const auto& vv = t.value(v);
                        if (auto* g = t.grad_slot(x))
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += d[i * m + j] * vv[j];
                        if (auto* g = t.grad_slot(v))
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) (*g)[j] += d[i * m + j] * xv[i * m + j];
                      });
}

template <Real T>
Var<T> scale_rows(Var<T> x, Var<T> v) {
  const auto& xv = x.value();
  const auto& vv = v.value();
  require_rank("scale_rows", xv, 2);
  require_rank("scale_rows", vv, 1);
  if (xv.dim(0) != vv.dim(0)) {
    throw DimensionError("scale_rows: " + shape_str(xv.shape()) + " by " + shape_str(vv.shape()));
  }
  const std::size_t n = xv.dim(0), m = xv.dim(1);
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] *= vv[i];
  return x.tape->push("scale_rows", std::move(out), {x, v},
                      [x, v, n, m](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        const auto& xv = t.value(x);
                        const auto& vv = t.value(v);
                        if (auto* g = t.grad_slot(x))
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += d[i * m + j] * vv[i];
                        if (auto* g = t.grad_slot(v))
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) (*g)[i] += d[i * m + j] * xv[i * m + j];
                      });
}

// --- reductions and shape -------------------------------------------------

template <Real T>
Var<T> sum(Var<T> x) {
  T s = 0;
  for (T v : x.value().values()) s += v;
  return x.tape->push("sum", Tensor<T>::scalar(s), {x},
                      [x](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(x))
                          for (auto& v : g->values()) v += d[0];
                      });
}

template <Real T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  T s = 0;
  for (T v : x.value().values()) s += v;
  return x.tape->push("mean", Tensor<T>::scalar(s / static_cast<T>(n)), {x},
                      [x, n](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(x))
                          for (auto& v : g->values()) v += d[0] / static_cast<T>(n);
                      });
}

template <Real T>
Var<T> reshape(Var<T> x, Shape shape) {
  return x.tape->push("reshape", x.value().reshaped(std::move(shape)), {x},
                      [x](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(x))
                          for (std::size_t i = 0; i < d.size(); ++i) (*g)[i] += d[i];
                      });
}

template <Real T>
Var<T> row(Var<T> x, std::size_t i) {
  const auto& xv = x.value();
  require_rank("row", xv, 2);
  if (i >= xv.dim(0)) {
    throw DimensionError("row " + std::to_string(i) + " out of range for " + shape_str(xv.shape()));
  }
  const std::size_t m = xv.dim(1);
  std::vector<T> data(xv.data() + i * m, xv.data() + (i + 1) * m);
  return x.tape->push("row", Tensor<T>({m}, std::move(data)), {x},
                      [x, i, m](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(x))
                          for (std::size_t j = 0; j < m; ++j) (*g)[i * m + j] += d[j];
                      });
}

template <Real T>
Var<T> stack(const std::vector<Var<T>>& rows) {
  if (rows.empty()) throw DimensionError("stack: no rows");
  const Shape& s0 = rows.front().shape();
  if (s0.size() != 1) throw DimensionError("stack: rows must be rank 1, got " + shape_str(s0));
  const std::size_t m = s0[0];
  std::vector<T> data;
  data.reserve(rows.size() * m);
  for (const auto& r : rows) {
    if (r.shape() != s0) throw DimensionError("stack: " + shape_str(r.shape()) + " vs " + shape_str(s0));
    const auto& v = r.value();
    data.insert(data.end(), v.values().begin(), v.values().end());
  }
  return rows.front().tape->push("stack", Tensor<T>({rows.size(), m}, std::move(data)), rows,
                                 [rows, m](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                                   for (std::size_t r = 0; r < rows.size(); ++r)
                                     if (auto* g = t.grad_slot(rows[r]))
                                       for (std::size_t j = 0; j < m; ++j) (*g)[j] += d[r * m + j];
                                 });
}

template <Real T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat: no parts");
  std::vector<T> data;
  for (const auto& p : parts) {
    if (p.shape().size() != 1) throw DimensionError("concat: parts must be rank 1, got " + shape_str(p.shape()));
    const auto& v = p.value();
    data.insert(data.end(), v.values().begin(), v.values().end());
  }
  const std::size_t total = data.size();
  return parts.front().tape->push("concat", Tensor<T>({total}, std::move(data)), parts,
                                  [parts](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                                    std::size_t off = 0;
                                    for (const auto& p : parts) {
                                      const std::size_t n = t.value(p).size();
                                      if (auto* g = t.grad_slot(p))
                                        for (std::size_t j = 0; j < n; ++j) (*g)[j] += d[off + j];
                                      off += n;
                                    }
                                  });
}

template <Real T>
Var<T> pad_to(Var<T> x, std::size_t width) {
  const auto& xv = x.value();
  require_rank("pad_to", xv, 1);
  const std::size_t n = xv.dim(0);
  if (width < n) throw DimensionError("pad_to: width " + std::to_string(width) + " < " + std::to_string(n));
  if (width == n) return x;
  Tensor<T> out({width}, T{0});
  std::copy(xv.values().begin(), xv.values().end(), out.values().begin());
  return x.tape->push("pad_to", std::move(out), {x},
                      [x, n](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(x))
                          for (std::size_t j = 0; j < n; ++j) (*g)[j] += d[j];
                      });
}

// --- attention and normalization -----------------------------------------

template <Real T>
Var<T> masked_softmax(Var<T> logits, const Mask& mask) {
  const auto& lv = logits.value();
  require_rank("masked_softmax", lv, 1);
  const std::size_t n = lv.dim(0);
  if (mask.size() != n) {
    throw DimensionError("masked_softmax: mask of length " + std::to_string(mask.size()) + " for " +
                         std::to_string(n) + " logits");
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) {
    throw InvalidMaskError("masked_softmax: no valid position");
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) mx = std::max(mx, static_cast<double>(lv[i]));
  std::vector<double> e(n, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    e[i] = std::exp(static_cast<double>(lv[i]) - mx);
    total += e[i];
  }
  Tensor<T> out({n}, T{0});
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i]) out[i] = static_cast<T>(e[i] / total);
  return logits.tape->push("masked_softmax", std::move(out), {logits},
                           [logits, mask, n](Tape<T>& t, const Tensor<T>& d, const Tensor<T>& y) {
                             auto* g = t.grad_slot(logits);
                             if (!g) return;
                             T s = 0;
                             for (std::size_t i = 0; i < n; ++i) s += y[i] * d[i];
                             for (std::size_t i = 0; i < n; ++i)
                               if (mask[i]) (*g)[i] += y[i] * (d[i] - s);
                           });
}

namespace {

// `update` receives the running-statistics update in train mode.
template <Real T>
Var<T> batchnorm_impl(Var<T> x, Var<T> gamma, Var<T> beta, const BatchNormState<T>& state,
                      BatchNormState<T>* update, Mode mode) {
  const auto& xv = x.value();
  require_rank("batchnorm", xv, 2);
  const std::size_t B = xv.dim(0), D = xv.dim(1);
  if (gamma.value().shape() != Shape{D} || beta.value().shape() != Shape{D}) {
    throw DimensionError("batchnorm: scale/shift must have shape [" + std::to_string(D) + "]");
  }
  if (state.running_mean.shape() != Shape{D} || state.running_var.shape() != Shape{D}) {
    throw DimensionError("batchnorm: running statistics must have shape [" + std::to_string(D) + "]");
  }
  if (mode == Mode::train && B < 2) {
    throw DimensionError("batchnorm: train mode needs a batch of at least 2, got " + std::to_string(B));
  }
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  Tensor<T> mu({D}, T{0}), inv_std({D}, T{0});
  if (mode == Mode::train) {
    Tensor<T> var({D}, T{0});
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < D; ++j) mu[j] += xv[i * D + j];
    for (auto& v : mu.values()) v /= static_cast<T>(B);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t j = 0; j < D; ++j) {
        const T c = xv[i * D + j] - mu[j];
        var[j] += c * c;
      }
    for (auto& v : var.values()) v /= static_cast<T>(B);
    for (std::size_t j = 0; j < D; ++j) {
      inv_std[j] = T{1} / std::sqrt(var[j] + state.eps);
    }
    if (update) {
      for (std::size_t j = 0; j < D; ++j) {
        update->running_mean[j] = state.momentum * state.running_mean[j] + (T{1} - state.momentum) * mu[j];
        const T unbiased = var[j] * static_cast<T>(B) / static_cast<T>(B - 1);
        update->running_var[j] = state.momentum * state.running_var[j] + (T{1} - state.momentum) * unbiased;
      }
    }
  } else {
    for (std::size_t j = 0; j < D; ++j) {
      mu[j] = state.running_mean[j];
      inv_std[j] = T{1} / std::sqrt(state.running_var[j] + state.eps);
    }
  }
  Tensor<T> xhat({B, D}, T{0});
  Tensor<T> out({B, D}, T{0});
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = 0; j < D; ++j) {
      const T h = (xv[i * D + j] - mu[j]) * inv_std[j];
      xhat[i * D + j] = h;
      out[i * D + j] = gv[j] * h + bv[j];
    }
  const bool batch_stats = mode == Mode::train;
  return x.tape->push(
      "batchnorm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, B, D, batch_stats, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
        const auto& gv = t.value(gamma);
        if (auto* g = t.grad_slot(gamma))
          for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < D; ++j) (*g)[j] += d[i * D + j] * xhat[i * D + j];
        if (auto* g = t.grad_slot(beta))
          for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < D; ++j) (*g)[j] += d[i * D + j];
        auto* gx = t.grad_slot(x);
        if (!gx) return;
        if (!batch_stats) {
          for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < D; ++j) (*gx)[i * D + j] += d[i * D + j] * gv[j] * inv_std[j];
          return;
        }
        for (std::size_t j = 0; j < D; ++j) {
          T sum_dh = 0, sum_dh_h = 0;
          for (std::size_t i = 0; i < B; ++i) {
            const T dh = d[i * D + j] * gv[j];
            sum_dh += dh;
            sum_dh_h += dh * xhat[i * D + j];
          }
          const T bn = static_cast<T>(B);
          for (std::size_t i = 0; i < B; ++i) {
            const T dh = d[i * D + j] * gv[j];
            (*gx)[i * D + j] += inv_std[j] / bn * (bn * dh - sum_dh - xhat[i * D + j] * sum_dh_h);
          }
        }
      });
}

}  // namespace

template <Real T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode) {
  return batchnorm_impl(x, gamma, beta, state, &state, mode);
}

template <Real T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, const BatchNormState<T>& state) {
  return batchnorm_impl(x, gamma, beta, state, static_cast<BatchNormState<T>*>(nullptr), Mode::infer);
}

template <Real T>
Var<T> dropout(Var<T> x, T rate, Mode mode, Rng& rng) {
  if (!(rate >= T{0}) || rate >= T{1}) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::infer || rate == T{0}) return x;
  const auto& xv = x.value();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const T keep_scale = T{1} / (T{1} - rate);
  Tensor<T> factor(xv.shape(), T{0});
  for (auto& f : factor.values()) f = u(rng) < static_cast<double>(rate) ? T{0} : keep_scale;
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  return x.tape->push("dropout", std::move(out), {x},
                      [x, factor = std::move(factor)](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(x))
                          for (std::size_t i = 0; i < d.size(); ++i) (*g)[i] += d[i] * factor[i];
                      });
}

// --- convolution ----------------------------------------------------------

template <Real T>
Var<T> conv2d(Var<T> x, Var<T> k, std::optional<Var<T>> bias, std::size_t stride, Padding padding) {
  const auto& xv = x.value();
  const auto& kv = k.value();
  require_rank("conv2d", xv, 3);
  require_rank("conv2d", kv, 4);
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  const std::size_t H = xv.dim(0), W = xv.dim(1), cin = xv.dim(2);
  const std::size_t kh = kv.dim(0), kw = kv.dim(1), cout = kv.dim(3);
  if (kv.dim(2) != cin) {
    throw DimensionError("conv2d: input " + shape_str(xv.shape()) + " has " + std::to_string(cin) +
                         " channels, kernel " + shape_str(kv.shape()) + " expects " +
                         std::to_string(kv.dim(2)));
  }
  if (bias && bias->value().shape() != Shape{cout}) {
    throw DimensionError("conv2d: bias " + shape_str(bias->value().shape()) + " for " +
                         std::to_string(cout) + " output channels");
  }
  std::size_t pad_h = 0, pad_w = 0;
  if (padding == Padding::same) {
    const std::size_t oh = (H + stride - 1) / stride, ow = (W + stride - 1) / stride;
    const std::size_t need_h = (oh - 1) * stride + kh, need_w = (ow - 1) * stride + kw;
    pad_h = need_h > H ? need_h - H : 0;
    pad_w = need_w > W ? need_w - W : 0;
  }
  const std::size_t Hp = H + pad_h, Wp = W + pad_w;
  if (kh > Hp || kw > Wp) {
    throw DimensionError("conv2d: kernel " + shape_str(kv.shape()) + " larger than padded input " +
                         std::to_string(Hp) + "x" + std::to_string(Wp));
  }
  const std::size_t top = pad_h / 2, left = pad_w / 2;
  const std::size_t Ho = (Hp - kh) / stride + 1, Wo = (Wp - kw) / stride + 1;
  const std::size_t patch = kh * kw * cin;

  Tensor<T> cols({Ho * Wo, patch}, T{0});
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox) {
      T* dst = cols.data() + (oy * Wo + ox) * patch;
      for (std::size_t i = 0; i < kh; ++i) {
        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(top);
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
        for (std::size_t j = 0; j < kw; ++j) {
          const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(left);
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
          const T* src = xv.data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin;
          std::copy(src, src + cin, dst + (i * kw + j) * cin);
        }
      }
    }
  Tensor<T> out({Ho, Wo, cout}, T{0});
  simd::kernels<T>().gemm_nn(Ho * Wo, cout, patch, cols.data(), kv.data(), out.data());
  if (bias) {
    const auto& bv = bias->value();
    for (std::size_t p = 0; p < Ho * Wo; ++p)
      for (std::size_t c = 0; c < cout; ++c) out[p * cout + c] += bv[c];
  }
  std::vector<Var<T>> inputs{x, k};
  if (bias) inputs.push_back(*bias);
  return x.tape->push(
      "conv2d", std::move(out), std::move(inputs),
      [=, cols = std::move(cols)](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
        const auto& kern = simd::kernels<T>();
        if (auto* g = t.grad_slot(k)) kern.gemm_tn(patch, cout, Ho * Wo, cols.data(), d.data(), g->data());
        if (bias) {
          if (auto* g = t.grad_slot(*bias))
            for (std::size_t p = 0; p < Ho * Wo; ++p)
              for (std::size_t c = 0; c < cout; ++c) (*g)[c] += d[p * cout + c];
        }
        auto* gx = t.grad_slot(x);
        if (!gx) return;
        Tensor<T> dcols({Ho * Wo, patch}, T{0});
        kern.gemm_nt(Ho * Wo, patch, cout, d.data(), t.value(k).data(), dcols.data());
        for (std::size_t oy = 0; oy < Ho; ++oy)
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const T* src = dcols.data() + (oy * Wo + ox) * patch;
            for (std::size_t i = 0; i < kh; ++i) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + i) - static_cast<std::ptrdiff_t>(top);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t j = 0; j < kw; ++j) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + j) - static_cast<std::ptrdiff_t>(left);
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                T* dst = gx->data() + (static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix)) * cin;
                const T* s = src + (i * kw + j) * cin;
                for (std::size_t c = 0; c < cin; ++c) dst[c] += s[c];
              }
            }
          }
      });
}

template <Real T>
Var<T> maxpool2d(Var<T> x, std::size_t size, std::size_t stride) {
  const auto& xv = x.value();
  require_rank("maxpool2d", xv, 3);
  if (size < 1 || stride < 1) throw ConfigError("maxpool2d: size and stride must be >= 1");
  const std::size_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  if (size > H || size > W) {
    throw DimensionError("maxpool2d: window " + std::to_string(size) + " larger than input " +
                         shape_str(xv.shape()));
  }
  const std::size_t Ho = (H - size) / stride + 1, Wo = (W - size) / stride + 1;
  Tensor<T> out({Ho, Wo, C}, T{0});
  std::vector<std::size_t> argmax(Ho * Wo * C);
  for (std::size_t oy = 0; oy < Ho; ++oy)
    for (std::size_t ox = 0; ox < Wo; ++ox)
      for (std::size_t c = 0; c < C; ++c) {
        std::size_t best = (oy * stride * W + ox * stride) * C + c;
        for (std::size_t i = 0; i < size; ++i)
          for (std::size_t j = 0; j < size; ++j) {
            const std::size_t idx = ((oy * stride + i) * W + ox * stride + j) * C + c;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (oy * Wo + ox) * C + c;
        out[o] = xv[best];
        argmax[o] = best;
      }
  return x.tape->push("maxpool2d", std::move(out), {x},
                      [x, argmax = std::move(argmax)](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(x))
                          for (std::size_t o = 0; o < argmax.size(); ++o) (*g)[argmax[o]] += d[o];
                      });
}

template <Real T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& xv = x.value();
  require_rank("global_avg_pool", xv, 3);
  const std::size_t H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  if (H == 0 || W == 0) throw DimensionError("global_avg_pool: empty spatial extent");
  const std::size_t hw = H * W;
  Tensor<T> out({C}, T{0});
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t c = 0; c < C; ++c) out[c] += xv[p * C + c];
  for (auto& v : out.values()) v /= static_cast<T>(hw);
  return x.tape->push("global_avg_pool", std::move(out), {x},
                      [x, hw, C](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                        if (auto* g = t.grad_slot(x))
                          for (std::size_t p = 0; p < hw; ++p)
                            for (std::size_t c = 0; c < C; ++c) (*g)[p * C + c] += d[c] / static_cast<T>(hw);
                      });
}

// --- loss -----------------------------------------------------------------

template <Real T>
Var<T> sigmoid_bce(Var<T> logits, const std::vector<T>& labels) {
  const auto& zv = logits.value();
  require_rank("sigmoid_bce", zv, 1);
  const std::size_t n = zv.dim(0);
  if (labels.size() != n || n == 0) {
    throw DimensionError("sigmoid_bce: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " logits");
  }
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T z = zv[i];
    total += std::max(z, T{0}) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return logits.tape->push("sigmoid_bce", Tensor<T>::scalar(total / static_cast<T>(n)), {logits},
                           [logits, labels, n](Tape<T>& t, const Tensor<T>& d, const Tensor<T>&) {
                             auto* g = t.grad_slot(logits);
                             if (!g) return;
                             const auto& zv = t.value(logits);
                             for (std::size_t i = 0; i < n; ++i)
                               (*g)[i] += d[0] * (stable_sigmoid(zv[i]) - labels[i]) / static_cast<T>(n);
                           });
}

#define MMFUSE_INSTANTIATE(T)                                                                  \
  template class GradientMap<T>;                                                               \
  template class Tape<T>;                                                                      \
  template Var<T> add(Var<T>, Var<T>);                                                         \
  template Var<T> sub(Var<T>, Var<T>);                                                         \
  template Var<T> mul(Var<T>, Var<T>);                                                         \
  template Var<T> scale(Var<T>, T);                                                            \
  template Var<T> activation(Var<T>, Activation);                                              \
  template Var<T> matmul(Var<T>, Var<T>);                                                      \
  template Var<T> linear(Var<T>, Var<T>, std::optional<Var<T>>);                               \
  template Var<T> matvec(Var<T>, Var<T>);                                                      \
  template Var<T> dot(Var<T>, Var<T>);                                                         \
  template Var<T> weighted_sum(Var<T>, Var<T>);                                                \
  template Var<T> scale_columns(Var<T>, Var<T>);                                               \
  template Var<T> scale_rows(Var<T>, Var<T>);                                                  \
  template Var<T> sum(Var<T>);                                                                 \
  template Var<T> mean(Var<T>);                                                                \
  template Var<T> reshape(Var<T>, Shape);                                                      \
  template Var<T> row(Var<T>, std::size_t);                                                    \
  template Var<T> stack(const std::vector<Var<T>>&);                                           \
  template Var<T> concat(const std::vector<Var<T>>&);                                          \
  template Var<T> pad_to(Var<T>, std::size_t);                                                 \
  template Var<T> masked_softmax(Var<T>, const Mask&);                                         \
  template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, BatchNormState<T>&, Mode);                 \
  template Var<T> batchnorm(Var<T>, Var<T>, Var<T>, const BatchNormState<T>&);                 \
  template Var<T> dropout(Var<T>, T, Mode, Rng&);                                              \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, std::size_t, Padding);         \
  template Var<T> maxpool2d(Var<T>, std::size_t, std::size_t);                                 \
  template Var<T> global_avg_pool(Var<T>);                                                     \
  template Var<T> sigmoid_bce(Var<T>, const std::vector<T>&);

MMFUSE_INSTANTIATE(float)
MMFUSE_INSTANTIATE(double)

}  // namespace mmfuse
