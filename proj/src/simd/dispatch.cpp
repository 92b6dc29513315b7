// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string_view>

#include "mmfuse/simd.hpp"

namespace mmfuse::simd {

#if defined(MMFUSE_HAVE_AVX2)
const KernelTable<float>& avx2_kernels_f32();
const KernelTable<double>& avx2_kernels_f64();
#endif
#if defined(MMFUSE_HAVE_NEON)
const KernelTable<float>& neon_kernels_f32();
const KernelTable<double>& neon_kernels_f64();
#endif

namespace {

bool cpu_has_vector_unit() {
#if defined(MMFUSE_HAVE_AVX2)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#elif defined(MMFUSE_HAVE_NEON)
  return true;
#else
  return false;
#endif
}

Isa detect() {
  if (const char* env = std::getenv("MMFUSE_SIMD"); env && std::string_view(env) == "scalar") {
    return Isa::scalar;
  }
  if (!cpu_has_vector_unit()) return Isa::scalar;
#if defined(MMFUSE_HAVE_AVX2)
  return Isa::avx2;
#elif defined(MMFUSE_HAVE_NEON)
  return Isa::neon;
#else
  return Isa::scalar;
#endif
}

std::atomic<Isa>& active() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

}  // namespace

const char* isa_name(Isa isa) {
  switch (isa) {
    case Isa::avx2: return "avx2";
    case Isa::neon: return "neon";
    case Isa::scalar: break;
  }
  return "scalar";
}

template <>
const KernelTable<float>* vector_kernels<float>() {
  if (!cpu_has_vector_unit()) return nullptr;
#if defined(MMFUSE_HAVE_AVX2)
  return &avx2_kernels_f32();
#elif defined(MMFUSE_HAVE_NEON)
  return &neon_kernels_f32();
#else
  return nullptr;
#endif
}

template <>
const KernelTable<double>* vector_kernels<double>() {
  if (!cpu_has_vector_unit()) return nullptr;
#if defined(MMFUSE_HAVE_AVX2)
  return &avx2_kernels_f64();
#elif defined(MMFUSE_HAVE_NEON)
  return &neon_kernels_f64();
#else
  return nullptr;
#endif
}

template <Real T>
const KernelTable<T>& kernels() {
  if (active().load(std::memory_order_relaxed) != Isa::scalar) {
    if (const auto* v = vector_kernels<T>()) return *v;
  }
  return scalar_kernels<T>();
}

template const KernelTable<float>& kernels<float>();
template const KernelTable<double>& kernels<double>();

Isa active_isa() { return active().load(); }

Isa select_isa(Isa isa) {
  if (isa != Isa::scalar && (vector_kernels<float>() == nullptr || vector_kernels<float>()->isa != isa)) {
    isa = Isa::scalar;
  }
  active().store(isa);
  return isa;
}

}  // namespace mmfuse::simd
