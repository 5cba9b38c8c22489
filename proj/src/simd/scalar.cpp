// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/simd/kernels.hpp"

namespace trafficdiff::simd {
namespace {

void axpby(std::size_t n, double a, const double* x, double b, const double* y,
           double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i];
}

void axpbypcz(std::size_t n, double a, const double* x, double b,
              const double* y, double c, const double* w, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a * x[i] + b * y[i] + c * w[i];
}

void select(std::size_t n, const std::uint8_t* mask, const double* if_true,
            const double* if_false, double* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = mask[i] ? if_true[i] : if_false[i];
}

double dot(std::size_t n, const double* x, const double* y) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double diag_gauss_posterior(std::size_t n, const double* z, const double* alpha,
                            const double* noise_var, const double* mu,
                            const double* var, double* post_mean) {
  double quad = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = alpha[i] * alpha[i] * var[i] + noise_var[i];
    const double r = z[i] - alpha[i] * mu[i];
    quad += r * r / v;
    post_mean[i] = mu[i] + alpha[i] * var[i] * r / v;
  }
  return quad;
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             const double* b, double* c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
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
      const double api = ap[i];
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

}  // namespace

const KernelTable& scalar_kernels() {
  static const KernelTable table{"scalar",  axpby,   axpbypcz, select,
                                 dot,       diag_gauss_posterior,
                                 gemm_nn,   gemm_nt, gemm_tn};
  return table;
}

}  // namespace trafficdiff::simd
