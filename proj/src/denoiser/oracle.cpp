// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <sstream>

#include "trafficdiff/denoiser.hpp"
#include "trafficdiff/simd/kernels.hpp"

namespace trafficdiff {

ConditioningContext ConditioningContext::unconditional(const SceneShape& shape) {
  return {InpaintingSpec::none(shape), ValidityMask(shape.agents, shape.steps(), true), {}};
}

SceneTensor Denoiser::predict_v(const SceneTensor& z, const NoiseVector& t,
                                const ConditioningContext& ctx) const {
  evaluations_.fetch_add(1, std::memory_order_relaxed);
  return compute_v(z, t, ctx);
}

SceneTensor Denoiser::predict_x(const SceneTensor& z, const NoiseVector& t,
                                const ConditioningContext& ctx) const {
  evaluations_.fetch_add(1, std::memory_order_relaxed);
  return compute_x(z, t, ctx);
}

SceneTensor Denoiser::compute_x(const SceneTensor& z, const NoiseVector& t,
                                const ConditioningContext& ctx) const {
  return x_from_z_v(z, compute_v(z, t, ctx), t);
}

SceneTensor ZeroDenoiser::compute_v(const SceneTensor& z, const NoiseVector& t,
                                    const ConditioningContext&) const {
  if (t.steps() != z.steps()) throw std::invalid_argument("noise vector length mismatch");
  return SceneTensor(z.shape());
}

SceneTensor FunctionDenoiser::compute_v(const SceneTensor& z, const NoiseVector& t,
                                        const ConditioningContext& ctx) const {
  return v_from_z_x(z, fn_(z, t, ctx), t);
}

SceneTensor FunctionDenoiser::compute_x(const SceneTensor& z, const NoiseVector& t,
                                        const ConditioningContext& ctx) const {
  return fn_(z, t, ctx);
}

MixtureScenePrior::MixtureScenePrior(std::vector<MixtureComponent> components)
    : components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("mixture prior has no components");
  shape_ = components_.front().mean.shape();
  double total = 0.0;
  for (const auto& c : components_) {
    if (!(c.mean.shape() == shape_) || !(c.variance.shape() == shape_))
      throw std::invalid_argument("mixture components have inconsistent shapes");
    if (!(c.weight > 0.0)) throw std::invalid_argument("mixture weight must be positive");
    for (double v : c.variance.values())
      if (!(v > 0.0)) throw std::invalid_argument("mixture variance must be positive");
    total += c.weight;
  }
  for (auto& c : components_) c.weight /= total;
}

std::pair<int, SceneTensor> MixtureScenePrior::sample(Rng& rng) const {
  const double u = rng.uniform();
  int k = 0;
  double acc = components_[0].weight;
  while (k + 1 < size() && u >= acc) acc += components_[++k].weight;
  const auto& c = components_[k];
  SceneTensor x(shape_);
  for (std::size_t i = 0; i < x.size(); ++i)
    x.values()[i] = c.mean.values()[i] + std::sqrt(c.variance.values()[i]) * rng.normal();
  return {k, std::move(x)};
}

SceneTensor MixtureScenePrior::mean() const {
  SceneTensor m(shape_);
  for (const auto& c : components_)
    for (std::size_t i = 0; i < m.size(); ++i) m.values()[i] += c.weight * c.mean.values()[i];
  return m;
}

namespace {

std::string describe(const std::vector<double>& ll) {
  std::ostringstream os;
  os << "mixture responsibilities underflow; component log-likelihoods:";
  for (double v : ll) os << ' ' << v;
  return os.str();
}

}  // namespace

ResponsibilityUnderflow::ResponsibilityUnderflow(std::vector<double> ll)
    : std::runtime_error(describe(ll)), log_likelihoods(std::move(ll)) {}

PosteriorResult oracle_posterior(const SceneTensor& z, const NoiseVector& t,
                                 const MixtureScenePrior& prior,
                                 const ConditioningContext& ctx) {
  const SceneShape& shape = prior.shape();
  if (!(z.shape() == shape)) throw std::invalid_argument("oracle: scene shape mismatch");
  if (t.steps() != shape.steps()) throw std::invalid_argument("oracle: noise vector mismatch");
  const std::size_t n = z.size();
  const bool has_mask = ctx.inpaint.mask.any();
  if (has_mask && !(ctx.inpaint.context.shape() == shape))
    throw std::invalid_argument("oracle: context shape mismatch");
  const Mask mask = has_mask ? ctx.inpaint.mask.expand(shape) : Mask();

  // Observation model per entry: obs = alpha x + noise.
  std::vector<double> obs(n), alpha(n), noise_var(n);
  for (int a = 0; a < shape.agents; ++a)
    for (int tau = 0; tau < shape.steps(); ++tau) {
      const NoiseLevel& lvl = t[tau];
      for (int d = 0; d < shape.features; ++d) {
        const std::size_t i = z.offset(a, tau, d);
        if (has_mask && mask(a, tau, d)) {
          obs[i] = ctx.inpaint.context.values()[i];
          alpha[i] = 1.0;
          noise_var[i] = 0.0;
        } else if (lvl.sigma == 0.0) {
          obs[i] = z.values()[i];
          alpha[i] = 1.0;
          noise_var[i] = 0.0;
        } else {
          obs[i] = z.values()[i];
          alpha[i] = lvl.alpha;
          noise_var[i] = lvl.sigma * lvl.sigma;
        }
      }
    }

  const auto& kern = simd::active();
  const int K = prior.size();
  std::vector<double> log_lik(K);
  std::vector<SceneTensor> post(K, SceneTensor(shape));
  for (int k = 0; k < K; ++k) {
    const auto& c = prior.components()[k];
    const double quad =
        kern.diag_gauss_posterior(n, obs.data(), alpha.data(), noise_var.data(),
                                  c.mean.values().data(), c.variance.values().data(),
                                  post[k].values().data());
    double log_det = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      log_det += std::log(alpha[i] * alpha[i] * c.variance.values()[i] + noise_var[i]);
    log_lik[k] = std::log(c.weight) - 0.5 * (quad + log_det);
  }
  const double max_ll = *std::max_element(log_lik.begin(), log_lik.end());
  if (!std::isfinite(max_ll)) throw ResponsibilityUnderflow(log_lik);
  std::vector<double> resp(K);
  double total = 0.0;
  for (int k = 0; k < K; ++k) total += resp[k] = std::exp(log_lik[k] - max_ll);
  for (double& r : resp) r /= total;

  PosteriorResult result{SceneTensor(shape), std::move(resp)};
  double* out = result.mean.values().data();
  for (int k = 0; k < K; ++k) {
    const double r = result.responsibilities[k];
    if (r == 0.0) continue;
    kern.axpby(n, 1.0, out, r, post[k].values().data(), out);
  }
  if (has_mask)
    kern.select(n, mask.bits().data(), ctx.inpaint.context.values().data(), out, out);
  return result;
}

SceneTensor OracleDenoiser::compute_x(const SceneTensor& z, const NoiseVector& t,
                                      const ConditioningContext& ctx) const {
  return oracle_posterior(z, t, prior_, ctx).mean;
}

SceneTensor OracleDenoiser::compute_v(const SceneTensor& z, const NoiseVector& t,
                                      const ConditioningContext& ctx) const {
  return v_from_z_x(z, compute_x(z, t, ctx), t);
}

}  // namespace trafficdiff
