// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

// Compiled with -mavx2 -mfma; only reached through the dispatch table after
// a CPUID check.

#include "trafficdiff/simd/kernels.hpp"

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>

namespace trafficdiff::simd {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void axpby(std::size_t n, double a, const double* x, double b, const double* y,
           double* out) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d r = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    r = _mm256_fmadd_pd(vb, _mm256_loadu_pd(y + i), r);
    _mm256_storeu_pd(out + i, r);
  }
  for (; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void axpbypcz(std::size_t n, double a, const double* x, double b,
              const double* y, double c, const double* w, double* out) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  const __m256d vc = _mm256_set1_pd(c);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d r = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    r = _mm256_fmadd_pd(vb, _mm256_loadu_pd(y + i), r);
    r = _mm256_fmadd_pd(vc, _mm256_loadu_pd(w + i), r);
    _mm256_storeu_pd(out + i, r);
  }
  for (; i < n; ++i) out[i] = a * x[i] + b * y[i] + c * w[i];
}

void select(std::size_t n, const std::uint8_t* mask, const double* if_true,
            const double* if_false, double* out) {
  std::size_t i = 0;
  const __m256i zero = _mm256_setzero_si256();
  for (; i + 4 <= n; i += 4) {
    // widen 4 mask bytes to 4 x 64-bit lanes
    std::uint32_t packed;
    __builtin_memcpy(&packed, mask + i, sizeof(packed));
    __m256i m = _mm256_cvtepu8_epi64(_mm_cvtsi32_si128(static_cast<int>(packed)));
    m = _mm256_cmpeq_epi64(m, zero);  // all-ones where mask == 0
    const __m256d sel = _mm256_blendv_pd(_mm256_loadu_pd(if_true + i),
                                         _mm256_loadu_pd(if_false + i),
                                         _mm256_castsi256_pd(m));
    _mm256_storeu_pd(out + i, sel);
  }
  for (; i < n; ++i) out[i] = mask[i] ? if_true[i] : if_false[i];
}

double dot(std::size_t n, const double* x, const double* y) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4),
                           _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

double diag_gauss_posterior(std::size_t n, const double* z, const double* alpha,
                            const double* noise_var, const double* mu,
                            const double* var, double* post_mean) {
  __m256d quad = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d a = _mm256_loadu_pd(alpha + i);
    const __m256d s = _mm256_loadu_pd(var + i);
    const __m256d m = _mm256_loadu_pd(mu + i);
    const __m256d as = _mm256_mul_pd(a, s);
    const __m256d v = _mm256_fmadd_pd(as, a, _mm256_loadu_pd(noise_var + i));
    const __m256d r = _mm256_fnmadd_pd(a, m, _mm256_loadu_pd(z + i));
    const __m256d rv = _mm256_div_pd(r, v);
    quad = _mm256_fmadd_pd(r, rv, quad);
    _mm256_storeu_pd(post_mean + i, _mm256_fmadd_pd(as, rv, m));
  }
  double q = hsum(quad);
  for (; i < n; ++i) {
    const double v = alpha[i] * alpha[i] * var[i] + noise_var[i];
    const double r = z[i] - alpha[i] * mu[i];
    q += r * r / v;
    post_mean[i] = mu[i] + alpha[i] * var[i] * r / v;
  }
  return q;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c0 = _mm256_loadu_pd(ci + j);
      __m256d c1 = _mm256_loadu_pd(ci + j + 4);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d aip = _mm256_set1_pd(a[i * k + p]);
        const double* bp = b + p * n + j;
        c0 = _mm256_fmadd_pd(aip, _mm256_loadu_pd(bp), c0);
        c1 = _mm256_fmadd_pd(aip, _mm256_loadu_pd(bp + 4), c1);
      }
      _mm256_storeu_pd(ci + j, c0);
      _mm256_storeu_pd(ci + j + 4, c1);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_loadu_pd(ci + j);
      for (std::size_t p = 0; p < k; ++p)
        c0 = _mm256_fmadd_pd(_mm256_set1_pd(a[i * k + p]),
                             _mm256_loadu_pd(b + p * n + j), c0);
      _mm256_storeu_pd(ci + j, c0);
    }
    for (; j < n; ++j) {
      double s = ci[j];
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      ci[j] = s;
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double s = dot(k, a + i * k, b + j * k);
      c[i * n + j] = accumulate ? c[i * n + j] + s : s;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  if (!accumulate)
    for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const __m256d api = _mm256_set1_pd(ap[i]);
      double* ci = c + i * n;
      std::size_t j = 0;
      for (; j + 4 <= n; j += 4)
        _mm256_storeu_pd(ci + j, _mm256_fmadd_pd(api, _mm256_loadu_pd(bp + j),
                                                 _mm256_loadu_pd(ci + j)));
      for (; j < n; ++j) ci[j] += ap[i] * bp[j];
    }
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{"avx2",  axpby,   axpbypcz, select,
                                 dot,     diag_gauss_posterior,
                                 gemm_nn, gemm_nt, gemm_tn};
  return &table;
}

}  // namespace trafficdiff::simd

#else

namespace trafficdiff::simd {
const KernelTable* avx2_kernels() { return nullptr; }
}  // namespace trafficdiff::simd

#endif
