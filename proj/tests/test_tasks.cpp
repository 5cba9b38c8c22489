// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trafficdiff/tasks.hpp"
#include "trafficdiff/world.hpp"

using namespace trafficdiff;
using trafficdiff::testing::max_abs_diff;
using trafficdiff::testing::random_tensor;

namespace {

// A car entering from the right lane and merging into the AV's lane.
const char* kCutIn = R"(# cut-in ahead of the AV
agent {
  type: CAR
  control_point { time_step: 0 x: 12.0 y: 3.5 }
  control_point { time_step: 10 x: 22.0 y: 1.75 heading: -0.1 }
  control_point { time_step: 20 x: 32.0 y: 0.0 }
}
hard_constraint { kind: NON_COLLISION }
hard_constraint { kind: RANGE feature: LENGTH min: 4 max: 5 }
)";

int config_error_line(const std::string& text) {
  try {
    parse_constraint_config(text);
  } catch (const ConfigError& e) {
    return e.line;
  }
  return -1;
}

TaskSpec spec(TaskKind kind, int samples, std::uint64_t seed = 1) {
  TaskSpec s;
  s.kind = kind;
  s.samples = samples;
  s.seed = seed;
  return s;
}

MixtureScenePrior gaussian(const SceneShape& shape, Rng& rng, double var) {
  MixtureComponent c{1.0, random_tensor(shape, rng), SceneTensor(shape, var)};
  return MixtureScenePrior({c});
}

// 1-D 2-Wasserstein distance between equal-size samples.
double w2(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / a.size());
}

}  // namespace

TEST_CASE("config parse errors report line and column") {
  CHECK(config_error_line("agent {\n  type: CAR\n") == 1);  // unterminated block: where it opened
  CHECK(config_error_line("agent {\n  colour: RED\n}") == 2);
  CHECK(config_error_line("hard_constraint { kind: TELEPORT }") == 1);
  CHECK(config_error_line("\n\nhard_constraint { kind: RANGE feature: MASS min: 1 max: 2 }") == 3);
  CHECK(config_error_line("agent { control_point { time_step: abc } }") == 1);
  try {
    parse_constraint_config("agent {\n   bogus: 1\n}");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.line == 2);
    CHECK(e.column == 4);
  }
}

TEST_CASE("empty config compiles to nothing") {
  const SceneShape shape{3, 2, 4};
  const auto c = compile_constraint_config("", shape, ValidityMask(3, 6, true));
  CHECK_FALSE(c.inpaint.mask.any());
  CHECK(c.clips.empty());
}

TEST_CASE("cut-in config compiles to exact inpainting entries") {
  const SceneShape shape{4, 11, 80};
  ValidityMask v(4, 91, false);
  v.set_agent(0, true);
  v.set_agent(1, true);
  const ConstraintConfig cfg = parse_constraint_config(kCutIn);
  const auto c = compile_constraints(cfg, shape, v);
  REQUIRE(c.slots == std::vector<int>{2});
  CHECK(c.validity.agent_any(2));
  CHECK_FALSE(c.validity.agent_any(3));
  const FeatureNormalizer n;
  // 3 points x (x, y, 4 type slots) plus heading (cos, sin) on one point.
  CHECK(c.inpaint.mask.count() == 3 * 6 + 2);
  for (const auto& cp : cfg.agents[0].points) {
    const int step = cp.time_step + 11;
    CHECK(c.inpaint.mask(2, step, channel::kX));
    CHECK(c.inpaint.mask(2, step, channel::kY));
    CHECK(c.inpaint.mask(2, step, channel::kType + 1));
    CHECK(c.inpaint.mask(2, step, channel::kCos) == cp.heading.has_value());
    CHECK_FALSE(c.inpaint.mask(2, step, channel::kLength));
    CHECK(c.inpaint.context.at(2, step, channel::kX) == n.normalize_position(cp.x));
    CHECK(c.inpaint.context.at(2, step, channel::kY) == n.normalize_position(cp.y));
  }
  CHECK_FALSE(c.inpaint.mask(2, 12, channel::kX));
  REQUIRE(c.clips.size() == 2);
  CHECK(c.clips[0].kind() == ClipKind::kNonCollision);
  CHECK(c.clips[1].kind() == ClipKind::kRange);
  const auto& r = c.clips[1].params<RangeClip>();
  CHECK(n.denormalize_length(r.min) >= 4.0);
  CHECK(n.denormalize_length(r.max) <= 5.0);
  CHECK(n.denormalize_length(r.min) == doctest::Approx(4.0));
}

TEST_CASE("compile rejects bad control points") {
  const SceneShape shape{2, 2, 3};
  const ValidityMask v(2, 5, false);
  CHECK_THROWS_AS(compile_constraint_config("agent { control_point { time_step: 3 x: 0 y: 0 } }", shape, v),
                  ConfigError);
  CHECK_THROWS_AS(compile_constraint_config("agent { control_point { time_step: -3 x: 0 y: 0 } }", shape, v),
                  ConfigError);
  CHECK_NOTHROW(compile_constraint_config("agent { control_point { time_step: -2 x: 0 y: 0 } }", shape, v));
  CHECK_THROWS_AS(compile_constraint_config("agent { control_point { time_step: 1 x: 0 y: 0 }\n"
                                            "control_point { time_step: 1 x: 1 y: 0 } }",
                                            shape, v),
                  ConfigError);
  CHECK_THROWS_AS(compile_constraint_config("agent {} agent {} agent {}", shape, v), ConfigError);
  CHECK_THROWS_AS(compile_constraint_config("agent { slot: 5 }", shape, v), ConfigError);
}

TEST_CASE("config round trip is a fixed point") {
  const ConstraintConfig a = parse_constraint_config(kCutIn);
  const std::string text = serialize_constraint_config(a);
  const ConstraintConfig b = parse_constraint_config(text);
  CHECK(a == b);
  CHECK(serialize_constraint_config(b) == text);
  const ConstraintConfig c = parse_constraint_config(
      "agent { type: PEDESTRIAN slot: 1 control_point { time_step: -1 x: -0.5 y: 1e-3 } }\n"
      "hard_constraint { kind: ONROAD agent: 1 agent: 2 iterations: 4 }\n"
      "hard_constraint { kind: NON_COLLISION epsilon: 0.01 }");
  CHECK(parse_constraint_config(serialize_constraint_config(c)) == c);
}

TEST_CASE("generated scenes satisfy control points exactly") {
  Rng rng(2);
  const SceneShape shape{4, 3, 10};
  ValidityMask v(4, 13, true);
  v.set_agent(3, false);
  const std::string text =
      "agent { type: CAR control_point { time_step: 0 x: 5 y: 1 } control_point { time_step: 9 x: 15 y: -2 } }\n"
      "agent { slot: 0 control_point { time_step: -3 x: 0 y: 0 } }";
  const auto c = compile_constraint_config(text, shape, v);
  const OracleDenoiser oracle(gaussian(shape, rng, 0.3));
  ConditioningContext ctx;
  ctx.inpaint = c.inpaint;
  ctx.validity = c.validity;
  for (auto sampler : {SamplerKind::kAncestral, SamplerKind::kHeun}) {
    TaskSpec s = spec(TaskKind::kConditionalScenegen, 4);
    s.sampler = sampler;
    s.denoise_steps = 6;
    const TaskResult r = run_scenegen(SceneTensor(shape), ctx, s, oracle);
    for (const auto& x : r.samples) {
      for (int a = 0; a < 4; ++a)
        for (int t = 0; t < 13; ++t)
          for (int d = 0; d < channel::kCount; ++d)
            if (c.inpaint.mask(a, t, d)) CHECK(x.at(a, t, d) == c.inpaint.context.at(a, t, d));
      CHECK(control_point_error(x, parse_constraint_config(text), c) < 1e-12);
    }
  }
}

TEST_CASE("scenegen edge cases") {
  Rng rng(3);
  const SceneShape shape{2, 2, 3, 3};
  OracleDenoiser oracle(gaussian(shape, rng, 0.5));
  ConditioningContext none;
  none.validity = ValidityMask(2, 5, false);
  oracle.reset_evaluations();
  const TaskResult empty = run_scenegen(SceneTensor(shape), none, spec(TaskKind::kScenegen, 3), oracle);
  CHECK(empty.samples.size() == 3);
  CHECK(empty.nfe == 0);
  CHECK(oracle.evaluations() == 0);
  for (const auto& x : empty.samples) CHECK(max_abs_diff(x, SceneTensor(shape)) == 0.0);

  // Everything conditioned: output equals the conditioning scene.
  const SceneTensor cond = random_tensor(shape, rng);
  ConditioningContext all;
  all.inpaint = {Mask::dense(shape, true), cond};
  const TaskResult full = run_scenegen(SceneTensor(shape), all, spec(TaskKind::kScenegen, 2), oracle);
  for (const auto& x : full.samples) CHECK(max_abs_diff(x, cond) == 0.0);

  // BP fixes the logged history.
  const SceneTensor log = random_tensor(shape, rng);
  const TaskResult bp = run_scenegen(log, ConditioningContext{}, spec(TaskKind::kBp, 2), oracle);
  for (const auto& x : bp.samples)
    for (int a = 0; a < 2; ++a)
      for (int t = 0; t < 2; ++t)
        for (int d = 0; d < 3; ++d) CHECK(x.at(a, t, d) == log.at(a, t, d));
  CHECK(bp.nfe == 2 * 16);

  TaskSpec bad = spec(TaskKind::kScenegen, 1);
  bad.perturb_level = 0.5;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  CHECK_THROWS_AS(spec(TaskKind::kLogPerturb, 1).validate(), std::invalid_argument);
  CHECK_THROWS_AS(task_kind_from_string("teleport"), std::invalid_argument);
}

TEST_CASE("samples with distinct seeds are distinct") {
  Rng rng(4);
  const SceneShape shape{2, 1, 3, 4};
  const OracleDenoiser oracle(gaussian(shape, rng, 0.5));
  TaskSpec s = spec(TaskKind::kScenegen, 16);
  s.denoise_steps = 4;
  const TaskResult r = run_scenegen(SceneTensor(shape), {}, s, oracle);
  for (int i = 0; i < 16; ++i)
    for (int j = i + 1; j < 16; ++j) CHECK(max_abs_diff(r.samples[i], r.samples[j]) > 0.0);
  s.workers = 4;
  const TaskResult p = run_scenegen(SceneTensor(shape), {}, s, oracle);
  for (int i = 0; i < 16; ++i) CHECK(max_abs_diff(r.samples[i], p.samples[i]) == 0.0);
}

TEST_CASE("log perturbation endpoints and monotonicity") {
  Rng rng(5);
  const SceneShape shape{3, 2, 6, 4};
  const MixtureScenePrior prior = gaussian(shape, rng, 1.0);
  const OracleDenoiser oracle(prior);
  const ValidityMask v(3, 8, true);
  ConditioningContext ctx;
  ctx.validity = v;

  // Paired design: the same logs and seeds at every level.
  const int seeds = 100;
  std::vector<SceneTensor> logs;
  for (int k = 0; k < seeds; ++k) logs.push_back(prior.sample(rng).second);
  TaskSpec s = spec(TaskKind::kLogPerturb, 1);
  std::vector<std::vector<double>> disp;
  for (double level : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    s.perturb_level = level;
    disp.emplace_back();
    for (int k = 0; k < seeds; ++k) {
      s.seed = static_cast<std::uint64_t>(k);
      const TaskResult r = run_log_perturbation(logs[k], ctx, s, oracle);
      if (level == 0.0) CHECK(max_abs_diff(r.samples[0], logs[k]) == 0.0);
      disp.back().push_back(mean_displacement(r.samples[0], logs[k], v));
    }
  }
  for (double d : disp[0]) CHECK(d == 0.0);
  for (std::size_t i = 1; i < disp.size(); ++i) {
    std::vector<double> inc;
    for (int k = 0; k < seeds; ++k) inc.push_back(disp[i][k] - disp[i - 1][k]);
    const auto diff = trafficdiff::testing::mean_var(inc);
    INFO("level " << i << " mean increase " << diff.mean << " se " << diff.se());
    CHECK(diff.mean > -3.0 * diff.se());
  }

  // t* = 1: output independent of the log. Correlate one coordinate.
  s.perturb_level = 1.0;
  const int n = 200;
  std::vector<double> lx, ox;
  for (int k = 0; k < n; ++k) {
    const SceneTensor log = prior.sample(rng).second;
    s.seed = 1000 + static_cast<std::uint64_t>(k);
    const TaskResult r = run_log_perturbation(log, ctx, s, oracle);
    lx.push_back(log.at(1, 5, 0));
    ox.push_back(r.samples[0].at(1, 5, 0));
  }
  auto mean = [](const std::vector<double>& a) {
    double m = 0.0;
    for (double x : a) m += x;
    return m / a.size();
  };
  const double ml = mean(lx), mo = mean(ox);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (int k = 0; k < n; ++k) {
    sxy += (lx[k] - ml) * (ox[k] - mo);
    sxx += (lx[k] - ml) * (lx[k] - ml);
    syy += (ox[k] - mo) * (ox[k] - mo);
  }
  CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 3.0 / std::sqrt(n));
}

TEST_CASE("generated sizes track the prior distribution") {
  Rng rng(6);
  BehaviorMixture m;
  m.capacity = 3;
  m.history = 2;
  m.future = 3;
  m.noise.size_m = 0.3;
  const double lengths[] = {4.5, 5.5, 12.0};
  const double widths[] = {1.9, 2.1, 2.6};
  for (int a = 0; a < 3; ++a) {
    AgentSpec s;
    s.lane = a % 2;
    s.s_ref = 10.0 * a;
    s.length = lengths[a];
    s.width = widths[a];
    s.behaviors = {{Behavior::kKeep, 1.0}};
    m.agents.push_back(s);
  }
  const RoadGraph g = build_world(WorldTemplate::kStraight, m.world, rng);
  const MixtureScenePrior prior = prior_as_mixture(g, m);
  const OracleDenoiser oracle(prior);
  const int n = 200;
  TaskSpec s = spec(TaskKind::kScenegen, n, 9);
  const TaskResult r = run_scenegen(SceneTensor(prior.shape()), {}, s, oracle);
  const FeatureNormalizer norm;
  auto pooled = [&](auto get) {
    std::vector<double> out;
    for (int k = 0; k < n; ++k) {
      const SceneTensor x = get(k);
      for (int a = 0; a < 3; ++a) {
        const auto f = norm.decode(x.row(a, 2));
        out.push_back(f.length + 3.0 * f.width);  // one projection of the joint
      }
    }
    return out;
  };
  const auto gen = pooled([&](int k) { return r.samples[k]; });
  const auto ref_a = pooled([&](int) { return prior.sample(rng).second; });
  const auto ref_b = pooled([&](int) { return prior.sample(rng).second; });
  const double baseline = w2(ref_a, ref_b);
  CHECK(w2(gen, ref_a) < 3.0 * baseline + 1e-3);
}
