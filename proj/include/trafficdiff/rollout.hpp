// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafficdiff/constraints.hpp"
#include "trafficdiff/denoiser.hpp"
#include "trafficdiff/diffusion.hpp"
#include "trafficdiff/scene.hpp"

namespace trafficdiff {

enum class RolloutMode { kOneShot, kFullAr, kAmortizedAr };
enum class SamplerKind { kAncestral, kHeun };

RolloutMode rollout_mode_from_string(const std::string& name);
const char* to_string(RolloutMode mode);
SamplerKind sampler_from_string(const std::string& name);
const char* to_string(SamplerKind kind);

// Physical simulation rate of the step grid.
inline constexpr double kStepHz = 10.0;

struct RolloutConfig {
  RolloutMode mode = RolloutMode::kOneShot;
  double replan_hz = 10.0;  // full_ar only
  int denoise_steps = 16;
  GridSpacing spacing = GridSpacing::kUniform;
  SamplerKind sampler = SamplerKind::kAncestral;
  std::uint64_t seed = 0;
  // Applied to x̂ inside every reverse-diffusion step, after inpainting.
  std::vector<ClipOperator> clips;

  // Steps committed per full_ar replan. Throws std::invalid_argument unless
  // replan_hz in (0, 10] divides the 10 Hz grid.
  int replan_interval() const;
  void validate() const;
};

// Denoiser failure annotated with the reverse-diffusion step index.
class DenoiserFailure : public std::runtime_error {
 public:
  DenoiserFailure(int diffusion_step, const std::string& what);
  int diffusion_step;
};

// Audit trail of a reverse chain or rollout.
struct ChainTrace {
  std::uint64_t nfe = 0;
  std::vector<std::vector<double>> noise_levels;  // per denoiser call, per step
};

// Reverse diffusion from z at grid[0] down to 0. Every step predicts x̂,
// imposes ctx.inpaint, applies `clips` and re-imposes ctx.inpaint before the
// transition. Returns the final clean sample.
SceneTensor reverse_chain(SceneTensor z, const SamplerGrid& grid, const ConditioningContext& ctx,
                          const Denoiser& denoiser, SamplerKind sampler,
                          const std::vector<ClipOperator>& clips, Rng& rng,
                          ChainTrace* trace = nullptr);

// History store plus the noisy future window of an autoregressive rollout.
// `track` holds the global timeline (input history then committed steps).
class RolloutBuffer {
 public:
  RolloutBuffer(SceneTensor track, ValidityMask validity);

  int history() const { return track_.history(); }
  int future() const { return track_.future(); }
  // Future steps committed so far.
  int elapsed() const { return elapsed_; }
  const SceneTensor& track() const { return track_; }
  SceneTensor& track() { return track_; }
  const ValidityMask& validity() const { return validity_; }

  // Noisy future window and its per-slot levels (amortized mode only).
  SceneTensor& window() { return window_; }
  const SceneTensor& window() const { return window_; }
  std::vector<double>& levels() { return levels_; }
  const std::vector<double>& levels() const { return levels_; }
  bool levels_monotone() const;

  // Appends committed rows for global steps [H + elapsed, H + elapsed + n).
  void commit(const SceneTensor& source, int source_step, int n);

 private:
  SceneTensor track_;
  ValidityMask validity_;
  int elapsed_ = 0;
  SceneTensor window_;
  std::vector<double> levels_;
};

// Overwrites elapsed steps of one agent. `states` maps global step index
// (0 = oldest history step) to a normalized feature row.
struct ExternalState {
  int step = 0;
  std::vector<double> row;
};

RolloutBuffer inject_external_agent(RolloutBuffer buffer, int agent,
                                    const std::vector<ExternalState>& states);
// In-place variant used from step hooks.
void inject_external_agent_inplace(RolloutBuffer& buffer, int agent,
                                   const std::vector<ExternalState>& states);

struct RolloutResult {
  SceneTensor scene;  // input history followed by the generated future
  std::uint64_t nfe = 0;
  std::vector<std::vector<double>> noise_levels;
  std::vector<double> step_ms;
  std::uint64_t seed = 0;
  int replans = 0;
};

// Called after each commit with the buffer; may inject external states.
using StepHook = std::function<void(RolloutBuffer&)>;

// `scene` supplies the H history steps; its future part is ignored unless
// ctx.inpaint conditions on it. ctx.validity covers all H + F steps.
RolloutResult one_shot(const SceneTensor& scene, const ConditioningContext& ctx,
                       const Denoiser& denoiser, const RolloutConfig& config);
RolloutResult full_ar(const SceneTensor& scene, const ConditioningContext& ctx,
                      const Denoiser& denoiser, const RolloutConfig& config,
                      const StepHook& hook = {});
RolloutResult amortized_ar(const SceneTensor& scene, const ConditioningContext& ctx,
                           const Denoiser& denoiser, const RolloutConfig& config,
                           const StepHook& hook = {});

// Dispatches on config.mode.
RolloutResult rollout(const SceneTensor& scene, const ConditioningContext& ctx,
                      const Denoiser& denoiser, const RolloutConfig& config,
                      const StepHook& hook = {});

// K rollouts with seeds derive_seed(config.seed, k) on up to `workers`
// threads; results are ordered by k.
std::vector<RolloutResult> rollout_samples(const SceneTensor& scene, const ConditioningContext& ctx,
                                           const Denoiser& denoiser, const RolloutConfig& config,
                                           int samples, int workers = 1);

// Analytic denoiser-call count for a configuration.
std::uint64_t expected_nfe(const RolloutConfig& config, int future);

// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

}  // namespace trafficdiff
