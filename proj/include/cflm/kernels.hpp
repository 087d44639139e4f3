// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Arithmetic inner loops. Every kernel has a portable scalar reference in
// cflm::kernels::scalar; single-precision kernels also have an AVX2/FMA
// variant selected at runtime. Double precision always takes the scalar path.

#include <cstddef>
#include <string_view>

namespace cflm::kernels {

enum class Backend { Scalar, Avx2 };

std::string_view to_string(Backend b);

/// True when the CPU supports AVX2 and FMA and the variant was compiled in.
bool avx2_available();
Backend active_backend();
/// Forces a backend (tests use this to compare variants). Throws
/// std::runtime_error if the backend is unavailable on this machine.
void set_backend(Backend b);

namespace scalar {

template <typename T>
T dot(const T* a, const T* b, size_t n) {
  T acc = T(0);
  for (size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[m x n] (+)= A[m x k] * B[k x n], row-major with leading dimensions.
template <typename T>
void gemm(size_t m, size_t n, size_t k, const T* a, size_t lda, const T* b, size_t ldb, T* c,
          size_t ldc, bool accumulate) {
  for (size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) {
      for (size_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (size_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      const T* brow = b + p * ldb;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace scalar

#if defined(CFLM_HAVE_AVX2_KERNELS)
namespace avx2 {
float dot(const float* a, const float* b, size_t n);
void axpy(float alpha, const float* x, float* y, size_t n);
void gemm(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b, size_t ldb,
          float* c, size_t ldc, bool accumulate);
}  // namespace avx2
#endif

float dot(const float* a, const float* b, size_t n);
void axpy(float alpha, const float* x, float* y, size_t n);
void gemm(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b, size_t ldb,
          float* c, size_t ldc, bool accumulate);

inline double dot(const double* a, const double* b, size_t n) { return scalar::dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, size_t n) {
  scalar::axpy(alpha, x, y, n);
}
inline void gemm(size_t m, size_t n, size_t k, const double* a, size_t lda, const double* b,
                 size_t ldb, double* c, size_t ldc, bool accumulate) {
  scalar::gemm(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

}  // namespace cflm::kernels
