// SPDX-License-Identifier: Apache-2.0
#include "mmfuse/simd.hpp"

namespace mmfuse::simd {
namespace {

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
T dot(const T* x, const T* y, std::size_t n) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] += dot(a + i * k, b + j * k, k);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

template <Real T>
const KernelTable<T>& scalar_kernels() {
  static const KernelTable<T> table{Isa::scalar, &gemm_nn<T>, &gemm_nt<T>, &gemm_tn<T>, &dot<T>,
                                    &axpy<T>};
  return table;
}

template const KernelTable<float>& scalar_kernels<float>();
template const KernelTable<double>& scalar_kernels<double>();

}  // namespace mmfuse::simd
