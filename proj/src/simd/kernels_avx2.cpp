// SPDX-License-Identifier: Apache-2.0
// Compiled with -mavx2 -mfma; only reached after a CPUID check.
#include <immintrin.h>

#include "mmfuse/simd.hpp"

namespace mmfuse::simd {
namespace {

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t width = 8;
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V set1(T v) { return _mm256_set1_ps(v); }
  static V zero() { return _mm256_setzero_ps(); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t width = 4;
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V set1(T v) { return _mm256_set1_pd(v); }
  static V zero() { return _mm256_setzero_pd(); }
  static V fmadd(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d hi64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, hi64));
  }
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
  auto acc0 = S::zero();
  auto acc1 = S::zero();
  std::size_t i = 0;
  for (; i + 2 * S::width <= n; i += 2 * S::width) {
    acc0 = S::fmadd(S::load(x + i), S::load(y + i), acc0);
    acc1 = S::fmadd(S::load(x + i + S::width), S::load(y + i + S::width), acc1);
  }
  for (; i + S::width <= n; i += S::width) acc0 = S::fmadd(S::load(x + i), S::load(y + i), acc0);
  typename S::T s = S::hsum(acc0) + S::hsum(acc1);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename S>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const typename S::T* a,
             const typename S::T* b, typename S::T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) axpy<S>(a[i * k + p], b + p * n, c + i * n, n);
  }
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
  static const KernelTable<typename S::T> t{Isa::avx2, &gemm_nn<S>, &gemm_nt<S>, &gemm_tn<S>,
                                            &dot<S>, &axpy<S>};
  return t;
}

}  // namespace

const KernelTable<float>& avx2_kernels_f32() { return table<F32>(); }
const KernelTable<double>& avx2_kernels_f64() { return table<F64>(); }

}  // namespace mmfuse::simd
