// SPDX-License-Identifier: Apache-2.0
// AArch64 NEON kernels (Advanced SIMD is mandatory on AArch64).
#include <arm_neon.h>

#include "mmfuse/simd.hpp"

namespace mmfuse::simd {
namespace {

struct F32 {
  using T = float;
  using V = float32x4_t;
  static constexpr std::size_t width = 4;
  static V load(const T* p) { return vld1q_f32(p); }
  static void store(T* p, V v) { vst1q_f32(p, v); }
  static V set1(T v) { return vdupq_n_f32(v); }
  static V zero() { return vdupq_n_f32(0.0f); }
  static V fmadd(V a, V b, V c) { return vfmaq_f32(c, a, b); }
  static T hsum(V v) { return vaddvq_f32(v); }
};

struct F64 {
  using T = double;
  using V = float64x2_t;
  static constexpr std::size_t width = 2;
  static V load(const T* p) { return vld1q_f64(p); }
  static void store(T* p, V v) { vst1q_f64(p, v); }
  static V set1(T v) { return vdupq_n_f64(v); }
  static V zero() { return vdupq_n_f64(0.0); }
  static V fmadd(V a, V b, V c) { return vfmaq_f64(c, a, b); }
  static T hsum(V v) { return vaddvq_f64(v); }
};

template <typename S>
void axpy(typename S::T alpha, const typename S::T* x, typename S::T* y, std::size_t n) {
  const auto va = S::set1(alpha);
  std::size_t i = 0;
  for (; i + S::width <= n; i += S::width) {
    S::store(y + i, S::fmadd(va, S::load(x + i), S::load(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename S>
typename S::T dot(const typename S::T* x, const typename S::T* y, std::size_t n) {
  auto acc = S::zero();
  std::size_t i = 0;
  for (; i + S::width <= n; i += S::width) acc = S::fmadd(S::load(x + i), S::load(y + i), acc);
  typename S::T s = S::hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename S>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const typename S::T* a,
             const typename S::T* b, typename S::T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) axpy<S>(a[i * k + p], b + p * n, c + i * n, n);
}

template <typename S>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const typename S::T* a,
             const typename S::T* b, typename S::T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot<S>(a + i * k, b + j * k, k);
}

template <typename S>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const typename S::T* a,
             const typename S::T* b, typename S::T* c) {
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t i = 0; i < m; ++i) axpy<S>(a[p * m + i], b + p * n, c + i * n, n);
}

template <typename S>
const KernelTable<typename S::T>& table() {
  static const KernelTable<typename S::T> t{Isa::neon, &gemm_nn<S>, &gemm_nt<S>, &gemm_tn<S>,
                                            &dot<S>, &axpy<S>};
  return t;
}

}  // namespace

const KernelTable<float>& neon_kernels_f32() { return table<F32>(); }
const KernelTable<double>& neon_kernels_f64() { return table<F64>(); }

}  // namespace mmfuse::simd
