// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense inner-loop kernels. Every kernel has a scalar reference version and,
// where the target supports it, an AVX2+FMA (x86-64) or NEON (AArch64)
// version. The active table is chosen once from CPUID at first use; setting
// MMFUSE_SIMD=scalar in the environment pins the reference kernels.
//
// All kernels accumulate into the destination and take row-major,
// contiguous operands.

#include <cstddef>

#include "mmfuse/tensor.hpp"

namespace mmfuse::simd {

enum class Isa { scalar, avx2, neon };

const char* isa_name(Isa isa);

template <Real T>
struct KernelTable {
  Isa isa;
  // C[m x n] += A[m x k] * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
  // C[m x n] += A[m x k] * B[n x k]^T
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
  // C[m x n] += A[k x m]^T * B[k x n]
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);
  T (*dot)(const T* x, const T* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
};

template <Real T>
const KernelTable<T>& scalar_kernels();

/// The vector kernel table for this build, or nullptr when none was compiled
/// in or the running CPU lacks the instructions.
template <Real T>
const KernelTable<T>* vector_kernels();

/// Kernels used by the tensor ops.
template <Real T>
const KernelTable<T>& kernels();

Isa active_isa();

/// Override the active table (tests only). Falls back to scalar when the
/// requested ISA is unavailable; returns the ISA actually selected.
Isa select_isa(Isa isa);

}  // namespace mmfuse::simd
