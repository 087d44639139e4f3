// Copyright (c) 2026 The CFLM Authors. All rights reserved.
// SPDX-License-Identifier: Apache-2.0

// Compiled with -mavx2 -mfma. Nothing in this translation unit may run unless
// avx2_available() returned true.

#include <immintrin.h>

#include "cflm/kernels.hpp"

namespace cflm::kernels::avx2 {

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

// One output row segment [j, j + width) for a single row of A, scalar tail.
inline void gemm_row_tail(size_t j0, size_t n, size_t k, const float* arow, const float* b,
                          size_t ldb, float* crow, bool accumulate) {
  for (size_t j = j0; j < n; ++j) {
    float acc = accumulate ? crow[j] : 0.0f;
    for (size_t p = 0; p < k; ++p) acc += arow[p] * b[p * ldb + j];
    crow[j] = acc;
  }
}

}  // namespace

float dot(const float* a, const float* b, size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  if (i + 8 <= n) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    i += 8;
  }
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy(float alpha, const float* x, float* y, size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void gemm(size_t m, size_t n, size_t k, const float* a, size_t lda, const float* b, size_t ldb,
          float* c, size_t ldc, bool accumulate) {
  size_t i = 0;
  // 4 x 16 register tile: 8 accumulators, 2 B loads and 4 broadcasts per k step.
  for (; i + 4 <= m; i += 4) {
    const float* a0 = a + (i + 0) * lda;
    const float* a1 = a + (i + 1) * lda;
    const float* a2 = a + (i + 2) * lda;
    const float* a3 = a + (i + 3) * lda;
    float* c0 = c + (i + 0) * ldc;
    float* c1 = c + (i + 1) * ldc;
    float* c2 = c + (i + 2) * ldc;
    float* c3 = c + (i + 3) * ldc;
    size_t j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256 r00, r01, r10, r11, r20, r21, r30, r31;
      if (accumulate) {
        r00 = _mm256_loadu_ps(c0 + j); r01 = _mm256_loadu_ps(c0 + j + 8);
        r10 = _mm256_loadu_ps(c1 + j); r11 = _mm256_loadu_ps(c1 + j + 8);
        r20 = _mm256_loadu_ps(c2 + j); r21 = _mm256_loadu_ps(c2 + j + 8);
        r30 = _mm256_loadu_ps(c3 + j); r31 = _mm256_loadu_ps(c3 + j + 8);
      } else {
        r00 = r01 = r10 = r11 = r20 = r21 = r30 = r31 = _mm256_setzero_ps();
      }
      for (size_t p = 0; p < k; ++p) {
        const float* brow = b + p * ldb + j;
        const __m256 b0 = _mm256_loadu_ps(brow);
        const __m256 b1 = _mm256_loadu_ps(brow + 8);
        __m256 av = _mm256_broadcast_ss(a0 + p);
        r00 = _mm256_fmadd_ps(av, b0, r00); r01 = _mm256_fmadd_ps(av, b1, r01);
        av = _mm256_broadcast_ss(a1 + p);
        r10 = _mm256_fmadd_ps(av, b0, r10); r11 = _mm256_fmadd_ps(av, b1, r11);
        av = _mm256_broadcast_ss(a2 + p);
        r20 = _mm256_fmadd_ps(av, b0, r20); r21 = _mm256_fmadd_ps(av, b1, r21);
        av = _mm256_broadcast_ss(a3 + p);
        r30 = _mm256_fmadd_ps(av, b0, r30); r31 = _mm256_fmadd_ps(av, b1, r31);
      }
      _mm256_storeu_ps(c0 + j, r00); _mm256_storeu_ps(c0 + j + 8, r01);
      _mm256_storeu_ps(c1 + j, r10); _mm256_storeu_ps(c1 + j + 8, r11);
      _mm256_storeu_ps(c2 + j, r20); _mm256_storeu_ps(c2 + j + 8, r21);
      _mm256_storeu_ps(c3 + j, r30); _mm256_storeu_ps(c3 + j + 8, r31);
    }
    for (; j + 8 <= n; j += 8) {
      __m256 r0, r1, r2, r3;
      if (accumulate) {
        r0 = _mm256_loadu_ps(c0 + j); r1 = _mm256_loadu_ps(c1 + j);
        r2 = _mm256_loadu_ps(c2 + j); r3 = _mm256_loadu_ps(c3 + j);
      } else {
        r0 = r1 = r2 = r3 = _mm256_setzero_ps();
      }
      for (size_t p = 0; p < k; ++p) {
        const __m256 b0 = _mm256_loadu_ps(b + p * ldb + j);
        r0 = _mm256_fmadd_ps(_mm256_broadcast_ss(a0 + p), b0, r0);
        r1 = _mm256_fmadd_ps(_mm256_broadcast_ss(a1 + p), b0, r1);
        r2 = _mm256_fmadd_ps(_mm256_broadcast_ss(a2 + p), b0, r2);
        r3 = _mm256_fmadd_ps(_mm256_broadcast_ss(a3 + p), b0, r3);
      }
      _mm256_storeu_ps(c0 + j, r0); _mm256_storeu_ps(c1 + j, r1);
      _mm256_storeu_ps(c2 + j, r2); _mm256_storeu_ps(c3 + j, r3);
    }
    if (j < n) {
      gemm_row_tail(j, n, k, a0, b, ldb, c0, accumulate);
      gemm_row_tail(j, n, k, a1, b, ldb, c1, accumulate);
      gemm_row_tail(j, n, k, a2, b, ldb, c2, accumulate);
      gemm_row_tail(j, n, k, a3, b, ldb, c3, accumulate);
    }
  }
  for (; i < m; ++i) {
    const float* arow = a + i * lda;
    float* crow = c + i * ldc;
    size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 r = accumulate ? _mm256_loadu_ps(crow + j) : _mm256_setzero_ps();
      for (size_t p = 0; p < k; ++p) {
        r = _mm256_fmadd_ps(_mm256_broadcast_ss(arow + p), _mm256_loadu_ps(b + p * ldb + j), r);
      }
      _mm256_storeu_ps(crow + j, r);
    }
    if (j < n) gemm_row_tail(j, n, k, arow, b, ldb, crow, accumulate);
  }
}

}  // namespace cflm::kernels::avx2
