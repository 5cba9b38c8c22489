// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafficdiff/diffusion.hpp"
#include "trafficdiff/geometry.hpp"
#include "trafficdiff/scene.hpp"

namespace trafficdiff {

// Everything a denoiser may condition on besides (z, t).
struct ConditioningContext {
  InpaintingSpec inpaint;
  ValidityMask validity;
  // Roadgraph sample points in normalized coordinates.
  std::vector<Vec2> road_points;

  static ConditioningContext unconditional(const SceneShape& shape);
};

// Base class for v-prediction denoisers. Every predict_* call counts as one
// evaluation; the counter is safe to bump from concurrent callers.
class Denoiser {
 public:
  virtual ~Denoiser() = default;

  SceneTensor predict_v(const SceneTensor& z, const NoiseVector& t,
                        const ConditioningContext& ctx) const;
  // x̂ = alpha z - sigma v̂ unless the implementation provides x̂ directly.
  SceneTensor predict_x(const SceneTensor& z, const NoiseVector& t,
                        const ConditioningContext& ctx) const;

  std::uint64_t evaluations() const { return evaluations_.load(std::memory_order_relaxed); }
  void reset_evaluations() { evaluations_.store(0, std::memory_order_relaxed); }

 protected:
  virtual SceneTensor compute_v(const SceneTensor& z, const NoiseVector& t,
                                const ConditioningContext& ctx) const = 0;
  virtual SceneTensor compute_x(const SceneTensor& z, const NoiseVector& t,
                                const ConditioningContext& ctx) const;

 private:
  mutable std::atomic<std::uint64_t> evaluations_{0};
};

// Always predicts v = 0 (so x̂ = alpha z). Used for evaluation counting.
class ZeroDenoiser final : public Denoiser {
 protected:
  SceneTensor compute_v(const SceneTensor& z, const NoiseVector& t,
                        const ConditioningContext& ctx) const override;
};

// Wraps an arbitrary x-prediction function.
class FunctionDenoiser final : public Denoiser {
 public:
  using Fn = std::function<SceneTensor(const SceneTensor&, const NoiseVector&,
                                       const ConditioningContext&)>;
  explicit FunctionDenoiser(Fn predict_x) : fn_(std::move(predict_x)) {}

 protected:
  SceneTensor compute_v(const SceneTensor& z, const NoiseVector& t,
                        const ConditioningContext& ctx) const override;
  SceneTensor compute_x(const SceneTensor& z, const NoiseVector& t,
                        const ConditioningContext& ctx) const override;

 private:
  Fn fn_;
};

struct MixtureComponent {
  double weight = 1.0;
  SceneTensor mean;
  SceneTensor variance;  // diagonal, strictly positive
};

class MixtureScenePrior {
 public:
  MixtureScenePrior() = default;
  // Normalizes weights; throws on shape mismatch, non-positive weights or
  // variances.
  explicit MixtureScenePrior(std::vector<MixtureComponent> components);

  const SceneShape& shape() const { return shape_; }
  const std::vector<MixtureComponent>& components() const { return components_; }
  int size() const { return static_cast<int>(components_.size()); }

  // Draws (component index, sample).
  std::pair<int, SceneTensor> sample(Rng& rng) const;
  // Mixture mean.
  SceneTensor mean() const;

 private:
  SceneShape shape_{};
  std::vector<MixtureComponent> components_;
};

class ResponsibilityUnderflow : public std::runtime_error {
 public:
  ResponsibilityUnderflow(std::vector<double> log_likelihoods);
  std::vector<double> log_likelihoods;
};

struct PosteriorResult {
  SceneTensor mean;
  std::vector<double> responsibilities;
};

// E[x | z_t, observed entries] under the mixture. Entries under the
// inpainting mask, and entries at t = 0, are treated as exact observations
// (z itself at t = 0, the context value under the mask).
PosteriorResult oracle_posterior(const SceneTensor& z, const NoiseVector& t,
                                 const MixtureScenePrior& prior,
                                 const ConditioningContext& ctx);

class OracleDenoiser final : public Denoiser {
 public:
  explicit OracleDenoiser(MixtureScenePrior prior) : prior_(std::move(prior)) {}
  const MixtureScenePrior& prior() const { return prior_; }

 protected:
  SceneTensor compute_v(const SceneTensor& z, const NoiseVector& t,
                        const ConditioningContext& ctx) const override;
  SceneTensor compute_x(const SceneTensor& z, const NoiseVector& t,
                        const ConditioningContext& ctx) const override;

 private:
  MixtureScenePrior prior_;
};

}  // namespace trafficdiff
