// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <stdexcept>

#include "cflm/kernels.hpp"

namespace cflm::kernels {

namespace {

bool detect_avx2() {
#if defined(CFLM_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{detect_avx2() ? Backend::Avx2 : Backend::Scalar};
  return slot;
}

}  // namespace

std::string_view to_string(Backend b) { return b == Backend::Avx2 ? "avx2" : "scalar"; }

bool avx2_available() {
  static const bool available = detect_avx2();
  return available;
}

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::Avx2 && !avx2_available()) {
    throw std::runtime_error("AVX2 kernels are not available on this machine");
  }
  backend_slot().store(b, std::memory_order_relaxed);
}

float dot(const float* a, const float* b, size_t n) {
#if defined(CFLM_HAVE_AVX2_KERNELS)
  if (active_backend() == Backend::Avx2) return avx2::dot(a, b, n);
#endif
  return scalar::dot(a, b, n);
}

void axpy(float alpha, const float* x, float* y, size_t n) {
#if defined(CFLM_HAVE_AVX2_KERNELS)
  if (active_backend() == Backend::Avx2) return avx2::axpy(alpha, x, y, n);
#endif
  scalar::axpy(alpha, x, y, n);
}

void gemm(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b, size_t ldb,
          float* c, size_t ldc, bool accumulate) {
#if defined(CFLM_HAVE_AVX2_KERNELS)
  if (active_backend() == Backend::Avx2) return avx2::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
#endif
  scalar::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace cflm::kernels
