// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace trafficdiff::simd {

// Table of data-parallel inner loops. Every entry has a scalar reference
// implementation; vector variants must agree with it to rounding (FMA
// contraction is the only permitted difference).
struct KernelTable {
  std::string_view name;

  // out = a*x + b*y
  void (*axpby)(std::size_t n, double a, const double* x, double b,
                const double* y, double* out);

  // out = a*x + b*y + c*w
  void (*axpbypcz)(std::size_t n, double a, const double* x, double b,
                   const double* y, double c, const double* w, double* out);

  // out[i] = mask[i] ? if_true[i] : if_false[i]
  void (*select)(std::size_t n, const std::uint8_t* mask,
                 const double* if_true, const double* if_false, double* out);

  double (*dot)(std::size_t n, const double* x, const double* y);

  // Diagonal Gaussian posterior for one mixture component under
  // z = alpha*x + noise, noise variance noise_var:
  //   v = alpha^2*var + noise_var, r = z - alpha*mu
  //   post_mean = mu + alpha*var*r/v
  // Returns sum r^2/v. log v terms are accumulated by the caller.
  double (*diag_gauss_posterior)(std::size_t n, const double* z,
                                 const double* alpha, const double* noise_var,
                                 const double* mu, const double* var,
                                 double* post_mean);

  // Row-major GEMMs, C is m x n.
  //   nn: C (+)= A[m x k] * B[k x n]
  //   nt: C (+)= A[m x k] * B[n x k]^T
  //   tn: C (+)= A[k x m]^T * B[k x n]
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate);
};

const KernelTable& scalar_kernels();

// nullptr when the build has no AVX2 translation unit.
const KernelTable* avx2_kernels();

bool cpu_supports_avx2();

// Kernels chosen at first use: AVX2+FMA when the CPU has them, scalar
// otherwise. TRAFFICDIFF_SIMD=scalar forces the reference path.
const KernelTable& active();

// Overrides the active table for the rest of the process. Returns false if
// the named table is unavailable on this machine.
bool select_kernels(std::string_view name);

}  // namespace trafficdiff::simd
