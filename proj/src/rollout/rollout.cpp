// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/rollout.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace trafficdiff {

RolloutMode rollout_mode_from_string(const std::string& name) {
  if (name == "one-shot" || name == "one_shot") return RolloutMode::kOneShot;
  if (name == "full-ar" || name == "full_ar") return RolloutMode::kFullAr;
  if (name == "amortized" || name == "amortized-ar" || name == "amortized_ar")
    return RolloutMode::kAmortizedAr;
  throw std::invalid_argument("unknown rollout mode: " + name);
}

const char* to_string(RolloutMode mode) {
  switch (mode) {
    case RolloutMode::kOneShot: return "one-shot";
    case RolloutMode::kFullAr: return "full-ar";
    case RolloutMode::kAmortizedAr: return "amortized";
  }
  return "one-shot";
}

SamplerKind sampler_from_string(const std::string& name) {
  if (name == "ancestral") return SamplerKind::kAncestral;
  if (name == "heun") return SamplerKind::kHeun;
  throw std::invalid_argument("unknown sampler: " + name);
}

const char* to_string(SamplerKind kind) {
  return kind == SamplerKind::kHeun ? "heun" : "ancestral";
}

int RolloutConfig::replan_interval() const {
  if (!(replan_hz > 0.0) || replan_hz > kStepHz)
    throw std::invalid_argument("replan rate must lie in (0, 10] Hz");
  const double steps = kStepHz / replan_hz;
  const double rounded = std::round(steps);
  if (std::abs(steps - rounded) > 1e-9 * std::max(1.0, steps))
    throw std::invalid_argument("replan rate must divide the 10 Hz step grid");
  return static_cast<int>(rounded);
}

void RolloutConfig::validate() const {
  if (denoise_steps < 1) throw std::invalid_argument("denoise_steps must be >= 1");
  if (mode == RolloutMode::kFullAr) (void)replan_interval();
}

DenoiserFailure::DenoiserFailure(int step, const std::string& what)
    : std::runtime_error("denoiser failed at diffusion step " + std::to_string(step) + ": " + what),
      diffusion_step(step) {}

SceneTensor reverse_chain(SceneTensor z, const SamplerGrid& grid, const ConditioningContext& ctx,
                          const Denoiser& denoiser, SamplerKind sampler,
                          const std::vector<ClipOperator>& clips, Rng& rng, ChainTrace* trace) {
  const int T = z.steps();
  for (int i = 0; i < grid.steps(); ++i) {
    const NoiseVector t = NoiseVector::constant(T, grid[i]);
    const NoiseVector s = NoiseVector::constant(T, grid[i + 1]);
    const PredictX predict = [&](const SceneTensor& zz, const NoiseVector& tt) {
      SceneTensor x = denoiser.predict_x(zz, tt, ctx);
      if (trace) {
        ++trace->nfe;
        trace->noise_levels.push_back(tt.times());
      }
      x = apply_inpainting(x, ctx.inpaint);
      if (!clips.empty()) x = apply_inpainting(apply_clips(x, clips, ctx.validity), ctx.inpaint);
      return x;
    };
    try {
      if (sampler == SamplerKind::kHeun) {
        z = second_order_step(z, predict, s, t);
      } else {
        z = denoise_step(z, predict(z, t), s, t, rng);
      }
    } catch (const DenoiserFailure&) {
      throw;
    } catch (const std::exception& e) {
      throw DenoiserFailure(i, e.what());
    }
  }
  return z;
}

RolloutBuffer::RolloutBuffer(SceneTensor track, ValidityMask validity)
    : track_(std::move(track)), validity_(std::move(validity)) {
  if (validity_.agents() != track_.agents() || validity_.steps() != track_.steps())
    throw std::invalid_argument("validity shape does not match the rollout track");
}

bool RolloutBuffer::levels_monotone() const {
  return std::is_sorted(levels_.begin(), levels_.end());
}

void RolloutBuffer::commit(const SceneTensor& source, int source_step, int n) {
  if (elapsed_ + n > future()) throw std::invalid_argument("commit past the rollout horizon");
  const int D = track_.features();
  for (int a = 0; a < track_.agents(); ++a)
    for (int k = 0; k < n; ++k) {
      auto src = source.row(a, source_step + k);
      auto dst = track_.row(a, history() + elapsed_ + k);
      std::copy(src.begin(), src.begin() + D, dst.begin());
    }
  elapsed_ += n;
}

void inject_external_agent_inplace(RolloutBuffer& buffer, int agent,
                                   const std::vector<ExternalState>& states) {
  SceneTensor& track = buffer.track();
  if (agent < 0 || agent >= track.agents()) throw std::invalid_argument("agent index out of range");
  if (!buffer.validity().agent_any(agent)) throw std::invalid_argument("agent row is not valid");
  const int limit = buffer.history() + buffer.elapsed();
  for (const auto& s : states) {
    if (s.step < 0 || s.step >= limit)
      throw std::invalid_argument("external states may only overwrite elapsed steps");
    if (static_cast<int>(s.row.size()) != track.features())
      throw std::invalid_argument("external state row has the wrong feature width");
  }
  for (const auto& s : states) std::copy(s.row.begin(), s.row.end(), track.row(agent, s.step).begin());
}

RolloutBuffer inject_external_agent(RolloutBuffer buffer, int agent,
                                    const std::vector<ExternalState>& states) {
  inject_external_agent_inplace(buffer, agent, states);
  return buffer;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

ValidityMask resolved_validity(const SceneTensor& scene, const ConditioningContext& ctx) {
  if (ctx.validity.agents() == scene.agents() && ctx.validity.steps() == scene.steps())
    return ctx.validity;
  if (ctx.validity.agents() != 0)
    throw std::invalid_argument("context validity does not match the scene shape");
  return ValidityMask(scene.agents(), scene.steps(), true);
}

// Conditioning for the planning window whose first step is global step
// `elapsed`: history rows come from the track, user inpainting and validity
// are shifted along with the window.
ConditioningContext window_context(const SceneTensor& track, const ValidityMask& validity,
                                   int elapsed, const ConditioningContext& base) {
  const SceneShape& shape = track.shape();
  const int T = shape.steps();
  const int H = shape.history;
  ConditioningContext ctx;
  ctx.road_points = base.road_points;
  ctx.validity = ValidityMask(shape.agents, T);
  for (int a = 0; a < shape.agents; ++a)
    for (int tau = 0; tau < T; ++tau) ctx.validity.set(a, tau, validity(a, std::min(elapsed + tau, T - 1)));

  Mask mask = Mask::dense(shape);
  SceneTensor context(shape);
  const bool has_user = base.inpaint.mask.broadcasts_to(shape) && base.inpaint.mask.any() &&
                        base.inpaint.context.shape() == shape;
  for (int a = 0; a < shape.agents; ++a)
    for (int tau = 0; tau < T; ++tau) {
      const int g = elapsed + tau;
      for (int d = 0; d < shape.features; ++d) {
        if (tau < H) {
          mask.set(a, tau, d, true);
          context.at(a, tau, d) = track.at(a, g, d);
        } else if (has_user && g < T && base.inpaint.mask(a, g, d)) {
          mask.set(a, tau, d, true);
          context.at(a, tau, d) = base.inpaint.context.at(a, g, d);
        }
      }
    }
  ctx.inpaint = {std::move(mask), std::move(context)};
  return ctx;
}

// One-shot plan for the window starting at global step `elapsed`.
SceneTensor plan(const SceneTensor& track, const ValidityMask& validity, int elapsed,
                 const ConditioningContext& base, const Denoiser& denoiser,
                 const RolloutConfig& config, Rng& rng, ChainTrace& trace) {
  const ConditioningContext ctx = window_context(track, validity, elapsed, base);
  SceneTensor z = sample_normal(track.shape(), rng);
  const SamplerGrid grid(config.denoise_steps, config.spacing);
  return reverse_chain(std::move(z), grid, ctx, denoiser, config.sampler, config.clips, rng, &trace);
}

RolloutResult finish(RolloutBuffer& buf, ChainTrace& trace, const RolloutConfig& config) {
  RolloutResult r;
  r.scene = std::move(buf.track());
  r.nfe = trace.nfe;
  r.noise_levels = std::move(trace.noise_levels);
  r.seed = config.seed;
  return r;
}

}  // namespace

RolloutResult one_shot(const SceneTensor& scene, const ConditioningContext& ctx,
                       const Denoiser& denoiser, const RolloutConfig& config) {
  config.validate();
  RolloutBuffer buf(scene, resolved_validity(scene, ctx));
  Rng rng(config.seed);
  ChainTrace trace;
  const auto start = Clock::now();
  const SceneTensor x = plan(buf.track(), buf.validity(), 0, ctx, denoiser, config, rng, trace);
  buf.commit(x, scene.history(), scene.future());
  const double ms = ms_since(start);
  RolloutResult r = finish(buf, trace, config);
  r.step_ms.push_back(ms);
  r.replans = 1;
  return r;
}

RolloutResult full_ar(const SceneTensor& scene, const ConditioningContext& ctx,
                      const Denoiser& denoiser, const RolloutConfig& config, const StepHook& hook) {
  config.validate();
  const int k = config.replan_interval();
  RolloutBuffer buf(scene, resolved_validity(scene, ctx));
  Rng rng(config.seed);
  ChainTrace trace;
  std::vector<double> step_ms;
  int replans = 0;
  while (buf.elapsed() < buf.future()) {
    const auto start = Clock::now();
    const SceneTensor x = plan(buf.track(), buf.validity(), buf.elapsed(), ctx, denoiser, config,
                               rng, trace);
    ++replans;
    // Only the replan interval is kept; the rest of the plan is discarded.
    buf.commit(x, scene.history(), std::min(k, buf.future() - buf.elapsed()));
    if (hook) hook(buf);
    step_ms.push_back(ms_since(start));
  }
  RolloutResult r = finish(buf, trace, config);
  r.step_ms = std::move(step_ms);
  r.replans = replans;
  return r;
}

RolloutResult amortized_ar(const SceneTensor& scene, const ConditioningContext& ctx,
                           const Denoiser& denoiser, const RolloutConfig& config,
                           const StepHook& hook) {
  config.validate();
  const int H = scene.history();
  const int F = scene.future();
  const int T = scene.steps();
  RolloutBuffer buf(scene, resolved_validity(scene, ctx));
  Rng rng(config.seed);
  ChainTrace trace;
  std::vector<double> step_ms;

  auto start = Clock::now();
  const SceneTensor warm = plan(buf.track(), buf.validity(), 0, ctx, denoiser, config, rng, trace);
  step_ms.push_back(ms_since(start));

  // Perturb the future with the monotone schedule; history stays clean.
  const NoiseVector ramp = monotone_schedule(H, F);
  std::vector<double>& levels = buf.levels();
  levels = ramp.times();
  SceneTensor& window = buf.window();
  window = warm;
  {
    const SceneTensor eps = sample_normal(scene.shape(), rng);
    for (int a = 0; a < scene.agents(); ++a)
      for (int tau = H; tau < T; ++tau)
        for (int d = 0; d < scene.features(); ++d)
          window.at(a, tau, d) = ramp[tau].alpha * warm.at(a, tau, d) + ramp[tau].sigma * eps.at(a, tau, d);
  }

  for (int i = 0; i < F; ++i) {
    start = Clock::now();
    const int e = buf.elapsed();
    const ConditioningContext wctx = window_context(buf.track(), buf.validity(), e, ctx);
    for (int a = 0; a < scene.agents(); ++a)
      for (int tau = 0; tau < H; ++tau)
        for (int d = 0; d < scene.features(); ++d) window.at(a, tau, d) = buf.track().at(a, e + tau, d);

    const NoiseVector t(levels);
    SceneTensor x_hat;
    try {
      x_hat = denoiser.predict_x(window, t, wctx);
    } catch (const std::exception& ex) {
      throw DenoiserFailure(i, ex.what());
    }
    ++trace.nfe;
    trace.noise_levels.push_back(levels);
    x_hat = apply_inpainting(x_hat, wctx.inpaint);
    if (!config.clips.empty())
      x_hat = apply_inpainting(apply_clips(x_hat, config.clips, wctx.validity), wctx.inpaint);

    // Pop the front slot (level 0) into the history store.
    buf.commit(x_hat, H, 1);

    // Shift forward one slot, re-noise at the ramp with fresh noise and
    // append a pure-noise slot at the back.
    const SceneTensor eps = sample_normal(scene.shape(), rng);
    for (int a = 0; a < scene.agents(); ++a)
      for (int j = 0; j < F; ++j) {
        const int tau = H + j;
        for (int d = 0; d < scene.features(); ++d) {
          if (j + 1 < F) {
            window.at(a, tau, d) =
                ramp[tau].alpha * x_hat.at(a, tau + 1, d) + ramp[tau].sigma * eps.at(a, tau, d);
          } else {
            window.at(a, tau, d) = eps.at(a, tau, d);
          }
        }
      }
    levels = ramp.times();
    levels[T - 1] = 1.0;
    if (hook) hook(buf);
    step_ms.push_back(ms_since(start));
  }
  RolloutResult r = finish(buf, trace, config);
  r.step_ms = std::move(step_ms);
  r.replans = 1;
  return r;
}

RolloutResult rollout(const SceneTensor& scene, const ConditioningContext& ctx,
                      const Denoiser& denoiser, const RolloutConfig& config, const StepHook& hook) {
  switch (config.mode) {
    case RolloutMode::kOneShot: return one_shot(scene, ctx, denoiser, config);
    case RolloutMode::kFullAr: return full_ar(scene, ctx, denoiser, config, hook);
    case RolloutMode::kAmortizedAr: return amortized_ar(scene, ctx, denoiser, config, hook);
  }
  return one_shot(scene, ctx, denoiser, config);
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  const int count = std::min(workers, n);
  pool.reserve(count);
  for (int w = 0; w < count; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

std::vector<RolloutResult> rollout_samples(const SceneTensor& scene, const ConditioningContext& ctx,
                                           const Denoiser& denoiser, const RolloutConfig& config,
                                           int samples, int workers) {
  std::vector<RolloutResult> out(std::max(0, samples));
  parallel_for(samples, workers, [&](int k) {
    RolloutConfig c = config;
    c.seed = derive_seed(config.seed, static_cast<std::uint64_t>(k));
    out[k] = rollout(scene, ctx, denoiser, c);
  });
  return out;
}

std::uint64_t expected_nfe(const RolloutConfig& config, int future) {
  const std::uint64_t chain = config.sampler == SamplerKind::kHeun
                                  ? 2 * static_cast<std::uint64_t>(config.denoise_steps) - 1
                                  : static_cast<std::uint64_t>(config.denoise_steps);
  switch (config.mode) {
    case RolloutMode::kOneShot: return chain;
    case RolloutMode::kFullAr: {
      const int k = config.replan_interval();
      return chain * static_cast<std::uint64_t>((future + k - 1) / k);
    }
    case RolloutMode::kAmortizedAr: return chain + static_cast<std::uint64_t>(future);
  }
  return chain;
}

}  // namespace trafficdiff
