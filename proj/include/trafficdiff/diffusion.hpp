// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "trafficdiff/rng.hpp"
#include "trafficdiff/scene.hpp"

namespace trafficdiff {

// Variance-preserving cosine schedule: alpha = cos(pi t / 2),
// sigma = sin(pi t / 2). t = 0 and t = 1 return exact endpoints.
struct NoiseLevel {
  double t = 0.0;
  double alpha = 1.0;
  double sigma = 0.0;
};

NoiseLevel schedule(double t);

// Lower bound applied to sigma_t wherever it is a divisor.
inline constexpr double kSigmaFloor = 1e-6;

// One diffusion time per physical step, broadcast over agents and features.
class NoiseVector {
 public:
  NoiseVector() = default;
  explicit NoiseVector(std::vector<double> times);
  static NoiseVector constant(int steps, double t);

  int steps() const { return static_cast<int>(levels_.size()); }
  const NoiseLevel& operator[](int step) const { return levels_[step]; }
  double t(int step) const { return levels_[step].t; }
  std::vector<double> times() const;
  // Mean diffusion time over [begin, end).
  double mean_t(int begin, int end) const;
  bool is_constant() const;

 private:
  std::vector<NoiseLevel> levels_;
};

// Zeros on the H history steps; future step j (0-based) gets j / F.
NoiseVector monotone_schedule(int history, int future);

// z = alpha * x + sigma * eps, per step.
SceneTensor forward_noise(const SceneTensor& x, const NoiseVector& t, const SceneTensor& eps);

// v = alpha * eps - sigma * x
SceneTensor v_from_x_eps(const SceneTensor& x, const SceneTensor& eps, const NoiseVector& t);
// x = alpha * z - sigma * v
SceneTensor x_from_z_v(const SceneTensor& z, const SceneTensor& v, const NoiseVector& t);
// v = (alpha * z - x) / sigma, sigma floored.
SceneTensor v_from_z_x(const SceneTensor& z, const SceneTensor& x, const NoiseVector& t);

// Gaussian posterior q(z_s | z_t, x) for a pair of diffusion times.
struct TransitionParams {
  double alpha_ts = 1.0;
  double sigma_ts_sq = 0.0;
  double coef_z = 0.0;  // alpha_ts sigma_s^2 / sigma_t^2
  double coef_x = 1.0;  // alpha_s sigma_ts^2 / sigma_t^2
  double variance = 0.0;  // sigma_ts^2 sigma_s^2 / sigma_t^2

  // Requires 0 <= s < t <= 1, or s == t == 0 (a clean, already-final entry
  // whose output is x).
  static TransitionParams compute(double s, double t);
};

// Ancestral step z_s = mu + sqrt(variance) * eps with fresh eps drawn in
// tensor order. Throws std::invalid_argument when any step has s >= t
// (other than s == t == 0).
SceneTensor denoise_step(const SceneTensor& z, const SceneTensor& x_hat, const NoiseVector& s,
                         const NoiseVector& t, Rng& rng);

// Deterministic DDIM step z_s = alpha_s x + sigma_s (z - alpha_t x) / sigma_t.
SceneTensor ddim_step(const SceneTensor& z, const SceneTensor& x_hat, const NoiseVector& s,
                      const NoiseVector& t);

using PredictX = std::function<SceneTensor(const SceneTensor& z, const NoiseVector& t)>;

// Heun corrector in x-space: predict at t, take the DDIM estimate to s,
// re-predict at s, and redo the DDIM step with the averaged prediction. The
// final step (s = 0 everywhere) returns the prediction at t after one call.
SceneTensor second_order_step(const SceneTensor& z, const PredictX& predict_x,
                              const NoiseVector& s, const NoiseVector& t);

enum class GridSpacing { kUniform, kLogSnr };

// Strictly decreasing diffusion times 1 = t_0 > ... > t_N = 0.
class SamplerGrid {
 public:
  explicit SamplerGrid(int steps = 16, GridSpacing spacing = GridSpacing::kUniform);
  static SamplerGrid from_times(std::vector<double> times);

  int steps() const { return static_cast<int>(times_.size()) - 1; }
  double operator[](int i) const { return times_[i]; }
  std::span<const double> times() const { return times_; }
  // The same spacing restricted to levels <= t_max: the smallest suffix of
  // the grid starting at t_max, with at least one step when t_max > 0.
  SamplerGrid truncated(double t_max) const;

 private:
  struct Raw {};
  explicit SamplerGrid(Raw) {}
  std::vector<double> times_;
};

// Standard normal tensor shaped like `shape`, drawn in tensor order.
SceneTensor sample_normal(const SceneShape& shape, Rng& rng);

}  // namespace trafficdiff
