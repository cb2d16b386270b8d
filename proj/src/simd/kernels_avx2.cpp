// Compiled with -mavx2 -mfma; only reached through the dispatch table after
// a CPUID check.
#include <immintrin.h>

#include "kernels_internal.hpp"

namespace cytocap::simd::avx2_impl {
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

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d high64 = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
}

// 4x16 register tile for float, 4x8 for double.
void gemm_f32(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
              const float* b, std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* a0 = a + (i + 0) * lda;
    const float* a1 = a + (i + 1) * lda;
    const float* a2 = a + (i + 2) * lda;
    const float* a3 = a + (i + 3) * lda;
    float* c0 = c + (i + 0) * ldc;
    float* c1 = c + (i + 1) * ldc;
    float* c2 = c + (i + 2) * ldc;
    float* c3 = c + (i + 3) * ldc;
    std::size_t j = 0;
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
      for (std::size_t p = 0; p < k; ++p) {
        const float* bp = b + p * ldb + j;
        const __m256 b0 = _mm256_loadu_ps(bp);
        const __m256 b1 = _mm256_loadu_ps(bp + 8);
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
      __m256 r0 = accumulate ? _mm256_loadu_ps(c0 + j) : _mm256_setzero_ps();
      __m256 r1 = accumulate ? _mm256_loadu_ps(c1 + j) : _mm256_setzero_ps();
      __m256 r2 = accumulate ? _mm256_loadu_ps(c2 + j) : _mm256_setzero_ps();
      __m256 r3 = accumulate ? _mm256_loadu_ps(c3 + j) : _mm256_setzero_ps();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256 bv = _mm256_loadu_ps(b + p * ldb + j);
        r0 = _mm256_fmadd_ps(_mm256_broadcast_ss(a0 + p), bv, r0);
        r1 = _mm256_fmadd_ps(_mm256_broadcast_ss(a1 + p), bv, r1);
        r2 = _mm256_fmadd_ps(_mm256_broadcast_ss(a2 + p), bv, r2);
        r3 = _mm256_fmadd_ps(_mm256_broadcast_ss(a3 + p), bv, r3);
      }
      _mm256_storeu_ps(c0 + j, r0);
      _mm256_storeu_ps(c1 + j, r1);
      _mm256_storeu_ps(c2 + j, r2);
      _mm256_storeu_ps(c3 + j, r3);
    }
    for (; j < n; ++j) {
      float s0 = accumulate ? c0[j] : 0.0f, s1 = accumulate ? c1[j] : 0.0f;
      float s2 = accumulate ? c2[j] : 0.0f, s3 = accumulate ? c3[j] : 0.0f;
      for (std::size_t p = 0; p < k; ++p) {
        const float bv = b[p * ldb + j];
        s0 += a0[p] * bv; s1 += a1[p] * bv; s2 += a2[p] * bv; s3 += a3[p] * bv;
      }
      c0[j] = s0; c1[j] = s1; c2[j] = s2; c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    const float* ai = a + i * lda;
    float* ci = c + i * ldc;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256 r = accumulate ? _mm256_loadu_ps(ci + j) : _mm256_setzero_ps();
      for (std::size_t p = 0; p < k; ++p) {
        r = _mm256_fmadd_ps(_mm256_broadcast_ss(ai + p), _mm256_loadu_ps(b + p * ldb + j), r);
      }
      _mm256_storeu_ps(ci + j, r);
    }
    for (; j < n; ++j) {
      float s = accumulate ? ci[j] : 0.0f;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * b[p * ldb + j];
      ci[j] = s;
    }
  }
}

void gemm_f64(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
              const double* b, std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* ar[4] = {a + i * lda, a + (i + 1) * lda, a + (i + 2) * lda, a + (i + 3) * lda};
    double* cr[4] = {c + i * ldc, c + (i + 1) * ldc, c + (i + 2) * ldc, c + (i + 3) * ldc};
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d r[4][2];
      for (int t = 0; t < 4; ++t) {
        r[t][0] = accumulate ? _mm256_loadu_pd(cr[t] + j) : _mm256_setzero_pd();
        r[t][1] = accumulate ? _mm256_loadu_pd(cr[t] + j + 4) : _mm256_setzero_pd();
      }
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * ldb + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        for (int t = 0; t < 4; ++t) {
          const __m256d av = _mm256_broadcast_sd(ar[t] + p);
          r[t][0] = _mm256_fmadd_pd(av, b0, r[t][0]);
          r[t][1] = _mm256_fmadd_pd(av, b1, r[t][1]);
        }
      }
      for (int t = 0; t < 4; ++t) {
        _mm256_storeu_pd(cr[t] + j, r[t][0]);
        _mm256_storeu_pd(cr[t] + j + 4, r[t][1]);
      }
    }
    for (; j < n; ++j) {
      for (int t = 0; t < 4; ++t) {
        double s = accumulate ? cr[t][j] : 0.0;
        for (std::size_t p = 0; p < k; ++p) s += ar[t][p] * b[p * ldb + j];
        cr[t][j] = s;
      }
    }
  }
  for (; i < m; ++i) {
    const double* ai = a + i * lda;
    double* ci = c + i * ldc;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d r = accumulate ? _mm256_loadu_pd(ci + j) : _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        r = _mm256_fmadd_pd(_mm256_broadcast_sd(ai + p), _mm256_loadu_pd(b + p * ldb + j), r);
      }
      _mm256_storeu_pd(ci + j, r);
    }
    for (; j < n; ++j) {
      double s = accumulate ? ci[j] : 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * b[p * ldb + j];
      ci[j] = s;
    }
  }
}

float dot_f32(const float* a, const float* b, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps(), acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i + 8), _mm256_loadu_ps(b + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc0);
  }
  float s = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double dot_f64(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd(), acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy_f32(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_f64(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d av = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(av, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const KernelTable table{&gemm_f32, &gemm_f64, &dot_f32, &dot_f64, &axpy_f32, &axpy_f64};

}  // namespace cytocap::simd::avx2_impl
