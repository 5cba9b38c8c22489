// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <atomic>
#include <cstdlib>
#include <string_view>

#include "trafficdiff/simd/kernels.hpp"

namespace trafficdiff::simd {
namespace {

const KernelTable* detect() {
  if (const char* env = std::getenv("TRAFFICDIFF_SIMD")) {
    if (std::string_view(env) == "scalar") return &scalar_kernels();
  }
  if (cpu_supports_avx2()) {
    if (const KernelTable* t = avx2_kernels()) return t;
  }
  return &scalar_kernels();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{detect()};
  return current;
}

}  // namespace

bool cpu_supports_avx2() {
#if (defined(__x86_64__) || defined(_M_X64)) && defined(__GNUC__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

bool select_kernels(std::string_view name) {
  if (name == "scalar") {
    slot().store(&scalar_kernels(), std::memory_order_release);
    return true;
  }
  if (name == "avx2" && cpu_supports_avx2() && avx2_kernels() != nullptr) {
    slot().store(avx2_kernels(), std::memory_order_release);
    return true;
  }
  return false;
}

}  // namespace trafficdiff::simd
