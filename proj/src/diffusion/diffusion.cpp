// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "trafficdiff/simd/kernels.hpp"

namespace trafficdiff {

NoiseLevel schedule(double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("diffusion time outside [0,1]: " + std::to_string(t));
  if (t == 0.0) return {0.0, 1.0, 0.0};
  if (t == 1.0) return {1.0, 0.0, 1.0};
  const double angle = 0.5 * std::numbers::pi * t;
  return {t, std::cos(angle), std::sin(angle)};
}

NoiseVector::NoiseVector(std::vector<double> times) {
  levels_.reserve(times.size());
  for (double t : times) levels_.push_back(schedule(t));
}

NoiseVector NoiseVector::constant(int steps, double t) {
  return NoiseVector(std::vector<double>(steps, t));
}

std::vector<double> NoiseVector::times() const {
  std::vector<double> out;
  out.reserve(levels_.size());
  for (const auto& l : levels_) out.push_back(l.t);
  return out;
}

double NoiseVector::mean_t(int begin, int end) const {
  double s = 0.0;
  for (int i = begin; i < end; ++i) s += levels_[i].t;
  return end > begin ? s / (end - begin) : 0.0;
}

bool NoiseVector::is_constant() const {
  return std::all_of(levels_.begin(), levels_.end(),
                     [&](const NoiseLevel& l) { return l.t == levels_.front().t; });
}

NoiseVector monotone_schedule(int history, int future) {
  if (history < 0 || future < 1)
    throw std::invalid_argument("monotone schedule needs H >= 0 and F >= 1");
  std::vector<double> t(history + future, 0.0);
  for (int tau = history; tau < history + future; ++tau)
    t[tau] = std::max(0.0, static_cast<double>(tau - history) / future);
  return NoiseVector(std::move(t));
}

namespace {

void check_steps(const SceneTensor& x, const NoiseVector& t, const char* what) {
  if (t.steps() != x.steps())
    throw std::invalid_argument(std::string(what) + ": noise vector length " +
                                std::to_string(t.steps()) + " != scene steps " +
                                std::to_string(x.steps()));
}

// out[a, tau, :] = ca(tau) * x + cb(tau) * y for per-step coefficients.
template <typename Coef>
SceneTensor per_step_axpby(const SceneTensor& x, const SceneTensor& y, Coef coef) {
  SceneTensor out(x.shape());
  const auto& k = simd::active();
  const std::size_t d = x.features();
  for (int a = 0; a < x.agents(); ++a)
    for (int tau = 0; tau < x.steps(); ++tau) {
      const auto [ca, cb] = coef(tau);
      const std::size_t off = x.offset(a, tau);
      k.axpby(d, ca, x.values().data() + off, cb, y.values().data() + off,
              out.values().data() + off);
    }
  return out;
}

void check_same_shape(const SceneTensor& a, const SceneTensor& b, const char* what) {
  if (!(a.shape() == b.shape()))
    throw std::invalid_argument(std::string(what) + ": tensor shapes differ");
}

}  // namespace

SceneTensor forward_noise(const SceneTensor& x, const NoiseVector& t, const SceneTensor& eps) {
  check_steps(x, t, "forward_noise");
  check_same_shape(x, eps, "forward_noise");
  return per_step_axpby(x, eps, [&](int tau) {
    return std::pair{t[tau].alpha, t[tau].sigma};
  });
}

SceneTensor v_from_x_eps(const SceneTensor& x, const SceneTensor& eps, const NoiseVector& t) {
  check_steps(x, t, "v_from_x_eps");
  check_same_shape(x, eps, "v_from_x_eps");
  return per_step_axpby(eps, x, [&](int tau) {
    return std::pair{t[tau].alpha, -t[tau].sigma};
  });
}

SceneTensor x_from_z_v(const SceneTensor& z, const SceneTensor& v, const NoiseVector& t) {
  check_steps(z, t, "x_from_z_v");
  check_same_shape(z, v, "x_from_z_v");
  return per_step_axpby(z, v, [&](int tau) {
    return std::pair{t[tau].alpha, -t[tau].sigma};
  });
}

SceneTensor v_from_z_x(const SceneTensor& z, const SceneTensor& x, const NoiseVector& t) {
  check_steps(z, t, "v_from_z_x");
  check_same_shape(z, x, "v_from_z_x");
  return per_step_axpby(z, x, [&](int tau) {
    const double inv = 1.0 / std::max(t[tau].sigma, kSigmaFloor);
    return std::pair{t[tau].alpha * inv, -inv};
  });
}

TransitionParams TransitionParams::compute(double s, double t) {
  if (s == 0.0 && t == 0.0) return {};
  if (!(s >= 0.0 && s < t && t <= 1.0))
    throw std::invalid_argument("transition needs 0 <= s < t <= 1 (s=" + std::to_string(s) +
                                ", t=" + std::to_string(t) + ")");
  const NoiseLevel ls = schedule(s);
  const NoiseLevel lt = schedule(t);
  TransitionParams p;
  if (s == 0.0) {
    // sigma_s = 0 collapses the posterior onto x.
    p.alpha_ts = lt.alpha;
    p.sigma_ts_sq = lt.sigma * lt.sigma;
    p.coef_z = 0.0;
    p.coef_x = 1.0;
    p.variance = 0.0;
    return p;
  }
  const double sig_t = std::max(lt.sigma, kSigmaFloor);
  const double sig_t_sq = sig_t * sig_t;
  p.alpha_ts = lt.alpha / ls.alpha;
  p.sigma_ts_sq = std::max(0.0, lt.sigma * lt.sigma - p.alpha_ts * p.alpha_ts * ls.sigma * ls.sigma);
  p.coef_z = p.alpha_ts * ls.sigma * ls.sigma / sig_t_sq;
  p.coef_x = ls.alpha * p.sigma_ts_sq / sig_t_sq;
  p.variance = p.sigma_ts_sq * ls.sigma * ls.sigma / sig_t_sq;
  return p;
}

SceneTensor denoise_step(const SceneTensor& z, const SceneTensor& x_hat, const NoiseVector& s,
                         const NoiseVector& t, Rng& rng) {
  check_steps(z, t, "denoise_step");
  check_steps(z, s, "denoise_step");
  check_same_shape(z, x_hat, "denoise_step");
  std::vector<TransitionParams> params(z.steps());
  for (int tau = 0; tau < z.steps(); ++tau) params[tau] = TransitionParams::compute(s.t(tau), t.t(tau));
  const SceneTensor eps = sample_normal(z.shape(), rng);
  SceneTensor out(z.shape());
  const auto& k = simd::active();
  const std::size_t d = z.features();
  for (int a = 0; a < z.agents(); ++a)
    for (int tau = 0; tau < z.steps(); ++tau) {
      const TransitionParams& p = params[tau];
      const std::size_t off = z.offset(a, tau);
      if (p.coef_z == 0.0 && p.variance == 0.0) {
        std::copy_n(x_hat.values().data() + off, d, out.values().data() + off);
        continue;
      }
      k.axpbypcz(d, p.coef_z, z.values().data() + off, p.coef_x, x_hat.values().data() + off,
                 std::sqrt(p.variance), eps.values().data() + off, out.values().data() + off);
    }
  return out;
}

SceneTensor ddim_step(const SceneTensor& z, const SceneTensor& x_hat, const NoiseVector& s,
                      const NoiseVector& t) {
  check_steps(z, t, "ddim_step");
  check_steps(z, s, "ddim_step");
  check_same_shape(z, x_hat, "ddim_step");
  for (int tau = 0; tau < z.steps(); ++tau) TransitionParams::compute(s.t(tau), t.t(tau));
  // z_s = (sigma_s / sigma_t) z + (alpha_s - sigma_s alpha_t / sigma_t) x
  return per_step_axpby(z, x_hat, [&](int tau) {
    if (s[tau].sigma == 0.0) return std::pair{0.0, 1.0};
    const double ratio = s[tau].sigma / std::max(t[tau].sigma, kSigmaFloor);
    return std::pair{ratio, s[tau].alpha - ratio * t[tau].alpha};
  });
}

SceneTensor second_order_step(const SceneTensor& z, const PredictX& predict_x,
                              const NoiseVector& s, const NoiseVector& t) {
  const SceneTensor x_t = predict_x(z, t);
  bool final_step = true;
  for (int tau = 0; tau < s.steps(); ++tau) final_step = final_step && s.t(tau) == 0.0;
  if (final_step) {
    ddim_step(z, x_t, s, t);  // validates (s, t)
    return x_t;
  }
  const SceneTensor z_euler = ddim_step(z, x_t, s, t);
  const SceneTensor x_s = predict_x(z_euler, s);
  SceneTensor x_bar(z.shape());
  simd::active().axpby(z.size(), 0.5, x_t.values().data(), 0.5, x_s.values().data(),
                       x_bar.values().data());
  return ddim_step(z, x_bar, s, t);
}

SamplerGrid::SamplerGrid(int steps, GridSpacing spacing) {
  if (steps < 1) throw std::invalid_argument("sampler grid needs at least one step");
  times_.resize(steps + 1);
  times_.front() = 1.0;
  times_.back() = 0.0;
  for (int i = 1; i < steps; ++i) {
    const double u = static_cast<double>(i) / steps;
    if (spacing == GridSpacing::kUniform) {
      times_[i] = 1.0 - u;
    } else {
      // log-SNR lambda = 2 log(alpha / sigma), uniform on [-10, 10].
      const double lambda = -10.0 + 20.0 * u;
      times_[i] = 2.0 / std::numbers::pi * std::atan(std::exp(-0.5 * lambda));
    }
  }
}

SamplerGrid SamplerGrid::from_times(std::vector<double> times) {
  if (times.size() < 1) throw std::invalid_argument("sampler grid is empty");
  if (times.back() != 0.0) throw std::invalid_argument("sampler grid must end at 0");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] < times[i - 1]))
      throw std::invalid_argument("sampler grid must be strictly decreasing");
  if (times.front() > 1.0) throw std::invalid_argument("sampler grid must start at <= 1");
  SamplerGrid g{Raw{}};
  g.times_ = std::move(times);
  return g;
}

SamplerGrid SamplerGrid::truncated(double t_max) const {
  if (!(t_max >= 0.0 && t_max <= 1.0))
    throw std::invalid_argument("truncation level outside [0,1]");
  std::vector<double> out{t_max};
  for (double t : times_)
    if (t < t_max) out.push_back(t);
  return from_times(std::move(out));
}

SceneTensor sample_normal(const SceneShape& shape, Rng& rng) {
  SceneTensor eps(shape);
  rng.fill_normal(eps.values());
  return eps;
}

}  // namespace trafficdiff
