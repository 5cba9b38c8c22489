// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trafficdiff/diffusion.hpp"

using namespace trafficdiff;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

const SceneShape kScalar{1, 1, 0, 1};

SceneTensor scalar(double v) {
  SceneTensor x(kScalar);
  x.at(0, 0, 0) = v;
  return x;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Two-sided Kolmogorov-Smirnov statistic against a normal CDF.
double ks_statistic(std::vector<double> xs, double mean, double sd) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = normal_cdf((xs[i] - mean) / sd);
    d = std::max({d, std::abs(f - i / n), std::abs((i + 1) / n - f)});
  }
  return d;
}

}  // namespace

TEST_CASE("schedule endpoints and identities") {
  const NoiseLevel a = schedule(0.0), b = schedule(0.5), c = schedule(1.0);
  CHECK(a.alpha == 1.0);
  CHECK(a.sigma == 0.0);
  CHECK(c.alpha == 0.0);
  CHECK(c.sigma == 1.0);
  CHECK(std::abs(b.alpha - std::numbers::sqrt2 / 2) < 1e-12);
  CHECK(std::abs(b.sigma - std::numbers::sqrt2 / 2) < 1e-12);
  for (int i = 0; i < 1000; ++i) {
    const NoiseLevel l = schedule(i / 999.0);
    CHECK(std::abs(l.alpha * l.alpha + l.sigma * l.sigma - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(schedule(-0.01), std::invalid_argument);
  CHECK_THROWS_AS(schedule(1.01), std::invalid_argument);
  CHECK_THROWS_AS(schedule(std::nan("")), std::invalid_argument);
}

TEST_CASE("forward noise endpoints") {
  Rng rng(1);
  const SceneShape shape{2, 2, 3};
  const SceneTensor x = random_tensor(shape, rng), eps = random_tensor(shape, rng);
  CHECK(forward_noise(x, NoiseVector::constant(5, 0.0), eps) == x);
  CHECK(forward_noise(x, NoiseVector::constant(5, 1.0), eps) == eps);
  // Per-step levels.
  const NoiseVector t({0.0, 1.0, 0.0, 1.0, 0.0});
  const SceneTensor z = forward_noise(x, t, eps);
  for (int a = 0; a < 2; ++a)
    for (int d = 0; d < shape.features; ++d) {
      CHECK(z.at(a, 0, d) == x.at(a, 0, d));
      CHECK(z.at(a, 1, d) == eps.at(a, 1, d));
    }
}

TEST_CASE("forward noise variance at t=0.3") {
  Rng rng(7);
  const SceneTensor x = scalar(0.0);
  const NoiseVector t = NoiseVector::constant(1, 0.3);
  std::vector<double> zs;
  for (int i = 0; i < 100000; ++i) zs.push_back(forward_noise(x, t, sample_normal(kScalar, rng)).at(0, 0, 0));
  const double s = schedule(0.3).sigma;
  CHECK(std::abs(testing::mean_var(zs).var / (s * s) - 1.0) < 0.01);
}

TEST_CASE("v parameterization identities") {
  Rng rng(2);
  const SceneShape shape{3, 2, 2};
  for (int trial = 0; trial < 20; ++trial) {
    const SceneTensor x = random_tensor(shape, rng), eps = random_tensor(shape, rng);
    std::vector<double> ts(4);
    for (double& t : ts) t = rng.uniform();
    const NoiseVector t(ts);
    const SceneTensor z = forward_noise(x, t, eps);
    CHECK(max_abs_diff(x_from_z_v(z, v_from_x_eps(x, eps, t), t), x) < 1e-10);
  }
  const SceneTensor x = random_tensor(shape, rng), eps = random_tensor(shape, rng);
  CHECK(v_from_x_eps(x, eps, NoiseVector::constant(4, 0.0)) == eps);
  const SceneTensor v1 = v_from_x_eps(x, eps, NoiseVector::constant(4, 1.0));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(v1.values()[i] == -x.values()[i]);
}

TEST_CASE("transition parameters") {
  const TransitionParams p = TransitionParams::compute(0.0, 0.7);
  CHECK(p.coef_z == 0.0);
  CHECK(p.coef_x == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(p.variance == 0.0);
  // s -> t: mu -> z.
  const TransitionParams q = TransitionParams::compute(0.7 - 1e-9, 0.7);
  CHECK(std::abs(q.coef_z - 1.0) < 1e-6);
  CHECK(std::abs(q.coef_x) < 1e-6);
  CHECK(q.variance < 1e-6);
  CHECK_THROWS_AS(TransitionParams::compute(0.5, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(TransitionParams::compute(0.6, 0.5), std::invalid_argument);
  CHECK_NOTHROW(TransitionParams::compute(0.0, 0.0));
  // Closed form: sigma_ts^2 = sigma_t^2 - alpha_ts^2 sigma_s^2.
  const NoiseLevel s = schedule(0.3), t = schedule(0.8);
  const TransitionParams r = TransitionParams::compute(0.3, 0.8);
  const double ats = t.alpha / s.alpha;
  CHECK(r.alpha_ts == doctest::Approx(ats).epsilon(1e-14));
  CHECK(r.sigma_ts_sq == doctest::Approx(t.sigma * t.sigma - ats * ats * s.sigma * s.sigma).epsilon(1e-12));
  CHECK(r.coef_z == doctest::Approx(ats * s.sigma * s.sigma / (t.sigma * t.sigma)).epsilon(1e-12));
  CHECK(r.coef_x == doctest::Approx(s.alpha * r.sigma_ts_sq / (t.sigma * t.sigma)).epsilon(1e-12));
}

TEST_CASE("denoise step at s=0 returns x_hat exactly") {
  Rng rng(3);
  const SceneShape shape{2, 1, 3};
  const SceneTensor z = random_tensor(shape, rng), xh = random_tensor(shape, rng);
  for (double t : {0.1, 0.5, 1.0})
    CHECK(denoise_step(z, xh, NoiseVector::constant(4, 0.0), NoiseVector::constant(4, t), rng) == xh);
  CHECK_THROWS_AS(denoise_step(z, xh, NoiseVector::constant(4, 0.5), NoiseVector::constant(4, 0.5), rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(denoise_step(z, xh, NoiseVector::constant(4, 0.6), NoiseVector::constant(4, 0.5), rng),
                  std::invalid_argument);
}

TEST_CASE("Ancestral transition with an exact posterior draw matches the marginal (KS < 0.01)") {
  // x ~ N(0,1): x | z_t ~ N(alpha_t z_t, sigma_t^2), and z_s ~ N(0,1).
  Rng rng(12);
  const NoiseVector t = NoiseVector::constant(1, 0.8), s = NoiseVector::constant(1, 0.4);
  const NoiseLevel lt = schedule(0.8);
  std::vector<double> out;
  for (int i = 0; i < 100000; ++i) {
    const double x = rng.normal();
    const SceneTensor z = forward_noise(scalar(x), t, sample_normal(kScalar, rng));
    const SceneTensor xs = scalar(lt.alpha * z.at(0, 0, 0) + lt.sigma * rng.normal());
    out.push_back(denoise_step(z, xs, s, t, rng).at(0, 0, 0));
  }
  CHECK(ks_statistic(out, 0.0, 1.0) < 0.01);
}

TEST_CASE("Ancestral transition with the posterior mean loses coef_x^2 Var[x|z_t]") {
  Rng rng(13);
  const NoiseVector t = NoiseVector::constant(1, 0.8), s = NoiseVector::constant(1, 0.4);
  const NoiseLevel lt = schedule(0.8);
  const TransitionParams p = TransitionParams::compute(0.4, 0.8);
  std::vector<double> out;
  for (int i = 0; i < 100000; ++i) {
    const SceneTensor z = sample_normal(kScalar, rng);  // z_t marginal is N(0,1)
    out.push_back(denoise_step(z, scalar(lt.alpha * z.at(0, 0, 0)), s, t, rng).at(0, 0, 0));
  }
  const double expected = 1.0 - p.coef_x * p.coef_x * lt.sigma * lt.sigma;
  CHECK(ks_statistic(out, 0.0, std::sqrt(expected)) < 0.01);
}

TEST_CASE("marginal consistency q(z_t|z_s) q(z_s|x)") {
  Rng rng(5);
  const double x = 0.8, s = 0.3, t = 0.7;
  const NoiseLevel ls = schedule(s), lt = schedule(t);
  const double ats = lt.alpha / ls.alpha;
  const double sts = std::sqrt(lt.sigma * lt.sigma - ats * ats * ls.sigma * ls.sigma);
  std::vector<double> zs;
  for (int i = 0; i < 100000; ++i) {
    const double z_s = ls.alpha * x + ls.sigma * rng.normal();
    zs.push_back(ats * z_s + sts * rng.normal());
  }
  const auto mv = testing::mean_var(zs);
  CHECK(std::abs(mv.mean / (lt.alpha * x) - 1.0) < 0.01);
  CHECK(std::abs(mv.var / (lt.sigma * lt.sigma) - 1.0) < 0.01);
}

TEST_CASE("iterated ancestral steps reproduce a Gaussian data mean") {
  // Data N(mu, v); the exact posterior mean is affine in z.
  const double mu = 0.7, var = 0.25;
  auto post = [&](double z, double t) {
    const NoiseLevel l = schedule(t);
    return mu + l.alpha * var * (z - l.alpha * mu) / (l.alpha * l.alpha * var + l.sigma * l.sigma);
  };
  Rng rng(8);
  const SamplerGrid grid(16);
  std::vector<double> xs;
  for (int i = 0; i < 10000; ++i) {
    SceneTensor z = sample_normal(kScalar, rng);
    for (int k = 0; k < grid.steps(); ++k) {
      const SceneTensor xh = scalar(post(z.at(0, 0, 0), grid[k]));
      z = denoise_step(z, xh, NoiseVector::constant(1, grid[k + 1]), NoiseVector::constant(1, grid[k]), rng);
    }
    xs.push_back(z.at(0, 0, 0));
  }
  // The chain is linear-Gaussian, so its output variance follows
  // Var <- (coef_z + coef_x d)^2 Var + variance with x_hat = c + d z.
  double chain_var = 1.0;
  for (int k = 0; k < grid.steps(); ++k) {
    const NoiseLevel l = schedule(grid[k]);
    const double d = l.alpha * var / (l.alpha * l.alpha * var + l.sigma * l.sigma);
    const TransitionParams p = TransitionParams::compute(grid[k + 1], grid[k]);
    chain_var = (p.coef_z + p.coef_x * d) * (p.coef_z + p.coef_x * d) * chain_var + p.variance;
  }
  const auto mv = testing::mean_var(xs);
  CHECK(std::abs(mv.mean - mu) < 3.0 * std::sqrt(chain_var / xs.size()));
  CHECK(std::abs(mv.var / chain_var - 1.0) < 0.05);
}

TEST_CASE("monotone schedule") {
  const NoiseVector m = monotone_schedule(11, 80);
  CHECK(m.steps() == 91);
  for (int t = 0; t < 11; ++t) CHECK(m.t(t) == 0.0);
  CHECK(m.t(11) == 0.0);
  CHECK(m.t(51) == 0.5);
  CHECK(m.t(90) == 79.0 / 80.0);
  for (int t = 1; t < 91; ++t) CHECK(m.t(t) >= m.t(t - 1));
  const NoiseVector z = monotone_schedule(0, 1);
  CHECK(z.steps() == 1);
  CHECK(z.t(0) == 0.0);
}

TEST_CASE("second order step") {
  Rng rng(4);
  const SceneShape shape{2, 1, 2};
  const SceneTensor atom = random_tensor(shape, rng);
  int calls = 0;
  // A z-independent prediction makes Heun and DDIM coincide.
  PredictX constant = [&](const SceneTensor&, const NoiseVector&) {
    ++calls;
    return atom;
  };
  const SceneTensor z = random_tensor(shape, rng);
  const NoiseVector t = NoiseVector::constant(3, 0.8), s = NoiseVector::constant(3, 0.5);
  CHECK(max_abs_diff(second_order_step(z, constant, s, t), ddim_step(z, atom, s, t)) < 1e-12);
  CHECK(calls == 2);
  calls = 0;
  CHECK(second_order_step(z, constant, NoiseVector::constant(3, 0.0), t) == atom);
  CHECK(calls == 1);

  // N-step grid: 2N - 1 evaluations.
  calls = 0;
  const SamplerGrid grid(16);
  SceneTensor zz = z;
  for (int k = 0; k < grid.steps(); ++k)
    zz = second_order_step(zz, constant, NoiseVector::constant(3, grid[k + 1]), NoiseVector::constant(3, grid[k]));
  CHECK(calls == 31);
  CHECK(zz == atom);
}

TEST_CASE("Heun tracks the exact probability-flow path of a Gaussian more closely than DDIM") {
  // For x ~ N(mu, v) the probability-flow map preserves the standardized
  // value (z - alpha mu) / sqrt(alpha^2 v + sigma^2).
  const double mu = 0.4, var = 0.3;
  auto scale = [&](double t) {
    const NoiseLevel l = schedule(t);
    return std::sqrt(l.alpha * l.alpha * var + l.sigma * l.sigma);
  };
  PredictX post = [&](const SceneTensor& z, const NoiseVector& t) {
    const NoiseLevel l = t[0];
    return scalar(mu + l.alpha * var * (z.at(0, 0, 0) - l.alpha * mu) / (scale(l.t) * scale(l.t)));
  };
  const double t0 = 0.9, s0 = 0.6, z0 = 1.3;
  const NoiseVector t = NoiseVector::constant(1, t0), s = NoiseVector::constant(1, s0);
  const double exact = schedule(s0).alpha * mu + (z0 - schedule(t0).alpha * mu) * scale(s0) / scale(t0);
  const double heun = second_order_step(scalar(z0), post, s, t).at(0, 0, 0);
  const double ddim = ddim_step(scalar(z0), post(scalar(z0), t), s, t).at(0, 0, 0);
  CHECK(std::abs(heun - exact) < std::abs(ddim - exact));
  CHECK(std::abs(heun - exact) < 1e-2);
}

TEST_CASE("sampler grid") {
  const SamplerGrid g(16);
  CHECK(g.steps() == 16);
  CHECK(g[0] == 1.0);
  CHECK(g[16] == 0.0);
  for (int i = 1; i <= 16; ++i) CHECK(g[i] < g[i - 1]);
  const SamplerGrid l(16, GridSpacing::kLogSnr);
  CHECK(l[0] == 1.0);
  CHECK(l[16] == 0.0);
  for (int i = 1; i <= 16; ++i) CHECK(l[i] < l[i - 1]);
  CHECK_THROWS_AS(SamplerGrid(0), std::invalid_argument);

  const SamplerGrid half = g.truncated(0.5);
  CHECK(half[0] == 0.5);
  CHECK(half.steps() == 8);
  const SamplerGrid odd = g.truncated(0.3);
  CHECK(odd[0] == 0.3);
  CHECK(odd[1] == 0.25);
  CHECK(g.truncated(1e-6).steps() == 1);
  CHECK(g.truncated(0.0).steps() == 0);
  CHECK(g.truncated(1.0).times().size() == g.times().size());
  CHECK_THROWS_AS(SamplerGrid::from_times({1.0, 0.5, 0.5, 0.0}), std::invalid_argument);
}
