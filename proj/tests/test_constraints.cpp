// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "test_util.hpp"
#include "trafficdiff/constraints.hpp"
#include "trafficdiff/world.hpp"

using namespace trafficdiff;
using trafficdiff::testing::max_abs_diff;

namespace {

const FeatureNormalizer kNorm;

// Agents are 4.5 x 2 m cars on a straight path; positions given in meters.
SceneTensor cars(const std::vector<std::vector<Vec2>>& paths, double heading = 0.0) {
  const int A = static_cast<int>(paths.size());
  const int T = static_cast<int>(paths[0].size());
  SceneTensor x({A, 1, T - 1});
  for (int a = 0; a < A; ++a)
    for (int t = 0; t < T; ++t) {
      AgentFeatures f;
      f.x = paths[a][t].x;
      f.y = paths[a][t].y;
      f.heading = heading;
      f.length = 4.5;
      f.width = 2.0;
      f.height = 1.5;
      f.type = AgentType::kCar;
      kNorm.encode(f, x.row(a, t));
    }
  return x;
}

std::vector<Vec2> line(Vec2 start, Vec2 vel, int T) {
  std::vector<Vec2> p;
  for (int t = 0; t < T; ++t) p.push_back({start.x + vel.x * t, start.y + vel.y * t});
  return p;
}

// Mean displacement of each agent vs the total displacement norm.
double rigid_fraction(const SceneTensor& before, const SceneTensor& after) {
  double rigid = 0.0, total = 0.0;
  for (int a = 0; a < before.agents(); ++a) {
    Vec2 mean{};
    std::vector<Vec2> d;
    for (int t = 0; t < before.steps(); ++t) {
      d.push_back({after.at(a, t, channel::kX) - before.at(a, t, channel::kX),
                   after.at(a, t, channel::kY) - before.at(a, t, channel::kY)});
      mean = mean + d.back() * (1.0 / before.steps());
    }
    for (const Vec2& v : d) {
      rigid += dot(mean, mean);
      total += dot(v, v);
    }
  }
  return total > 0.0 ? std::sqrt(rigid / total) : 1.0;
}

}  // namespace

TEST_CASE("range clip") {
  SceneTensor x({2, 1, 1});
  x.at(0, 0, channel::kLength) = 1.2;
  x.at(1, 0, channel::kLength) = 0.5;
  const RangeClip r{channel::kLength, 0.0, 1.0, {}};
  const SceneTensor y = clip_range(x, r, {});
  CHECK(y.at(0, 0, channel::kLength) == 1.0);
  CHECK(y.at(1, 0, channel::kLength) == 0.5);
  CHECK(max_abs_diff(clip_range(y, r, {}), y) == 0.0);
  CHECK_THROWS_AS(clip_range(x, RangeClip{channel::kLength, 1.0, 0.0, {}}, {}), std::invalid_argument);
  CHECK_THROWS_AS(ClipOperator(RangeClip{channel::kLength, 1.0, 0.0, {}}), std::invalid_argument);

  // Selector restricts the agents touched.
  RangeClip only1 = r;
  only1.selector.agents = {1};
  CHECK(clip_range(x, only1, {}).at(0, 0, channel::kLength) == 1.2);
}

TEST_CASE("length range in meters decodes within bounds") {
  Rng rng(1);
  SceneTensor x({5, 2, 6});
  for (double& v : x.values()) v = rng.normal() * 2.0;
  const RangeClip r{channel::kLength, kNorm.normalize_length(7.0), kNorm.normalize_length(9.0), {}};
  const SceneTensor y = clip_range(x, r, {});
  for (int a = 0; a < 5; ++a)
    for (int t = 0; t < 8; ++t) {
      const double l = kNorm.decode(y.row(a, t)).length;
      CHECK(l >= 7.0 - 1e-12);
      CHECK(l <= 9.0 + 1e-12);
    }
}

TEST_CASE("collision clip is the identity without interaction") {
  const SceneTensor far = cars({line({0, 0}, {1, 0}, 5), line({0, 200}, {1, 0}, 5)});
  CHECK(collision_objective(far, {}, {}) == 0.0);
  CHECK(max_abs_diff(clip_collision(far, {}, {}), far) == 0.0);
  const SceneTensor single = cars({line({0, 0}, {1, 0}, 5)});
  CHECK(max_abs_diff(clip_collision(single, {}, {}), single) == 0.0);
  CHECK_THROWS_AS(ClipOperator(CollisionFieldParams{.epsilon = 0.0}), std::invalid_argument);
}

TEST_CASE("collision clip removes overlaps") {
  Rng rng(2);
  int resolved = 0, lowered = 0;
  double rigid_min = 1.0;
  const CollisionFieldParams params;
  for (int seed = 0; seed < 100; ++seed) {
    const Vec2 off{rng.uniform(-3.0, 3.0), rng.uniform(-1.5, 1.5)};
    const double h = rng.uniform(-0.3, 0.3);
    const SceneTensor x = cars({line({0, 0}, {1, 0}, 8), line(off, {1, 0}, 8)}, h);
    if (count_box_overlaps(x, {}) == 0) {
      // Offsets occasionally miss; still must be the identity.
      CHECK(max_abs_diff(clip_collision(x, {}, params), x) == 0.0);
      ++resolved;
      ++lowered;
      continue;
    }
    ClipReport rep;
    const SceneTensor y = clip_collision(x, {}, params, &rep);
    CHECK_FALSE(rep.aborted);
    for (std::size_t i = 1; i < rep.objective.size(); ++i) CHECK(rep.objective[i] <= rep.objective[i - 1]);
    lowered += collision_objective(y, {}, params) < collision_objective(x, {}, params);
    resolved += count_box_overlaps(y, {}) == 0;
    rigid_min = std::min(rigid_min, rigid_fraction(x, y));
    // Only positions move.
    for (int a = 0; a < 2; ++a)
      for (int t = 0; t < x.steps(); ++t)
        for (int d = channel::kZ; d < channel::kCount; ++d) CHECK(y.at(a, t, d) == x.at(a, t, d));
  }
  CHECK(resolved >= 95);
  CHECK(lowered >= 95);
  CHECK(rigid_min >= 0.5);
}

TEST_CASE("collision clip aborts on non-finite input") {
  SceneTensor x = cars({line({0, 0}, {1, 0}, 3), line({1, 0}, {1, 0}, 3)});
  x.at(0, 1, channel::kX) = std::nan("");
  ClipReport rep;
  const SceneTensor y = clip_collision(x, {}, {}, &rep);
  CHECK(rep.aborted);
  CHECK(std::isnan(y.at(0, 1, channel::kX)));
}

TEST_CASE("collision clip is idempotent") {
  const SceneTensor x = cars({line({0, 0}, {1, 0}, 6), line({1.0, 0.5}, {1, 0}, 6)});
  const SceneTensor y = clip_collision(x, {}, {});
  CHECK(max_abs_diff(clip_collision(y, {}, {}), y) < 1e-6);
}

TEST_CASE("onroad potential and exemptions") {
  OnroadFieldParams p;
  p.polygons = {close_ring({{0, 0}, {1, 0}, {1, 1}, {0, 1}})};
  SceneTensor x({1, 0, 10});
  // One waypoint inside the square: potential 0, unchanged.
  x.at(0, 0, channel::kX) = 0.5;
  x.at(0, 0, channel::kY) = 0.5;
  ValidityMask one(1, 10, false);
  one.set(0, 0, true);
  CHECK(onroad_objective(x, one, p) == 0.0);
  CHECK(max_abs_diff(clip_onroad(x, one, p), x) == 0.0);

  // 10% onroad: exempt.
  for (int t = 1; t < 10; ++t) {
    x.at(0, t, channel::kX) = 1.0 + 0.1 * t;
    x.at(0, t, channel::kY) = 0.5;
  }
  CHECK(onroad_objective(x, {}, p) == 0.0);
  CHECK(max_abs_diff(clip_onroad(x, {}, p), x) == 0.0);

  // 30% onroad: offroad points descend onto the square; potential is d^2.
  x.at(0, 1, channel::kX) = 0.6;
  x.at(0, 2, channel::kX) = 0.7;
  double want = 0.0;
  for (int t = 3; t < 10; ++t) want += (0.1 * t) * (0.1 * t);
  CHECK(onroad_objective(x, {}, p) == doctest::Approx(want).epsilon(1e-12));
  ClipReport rep;
  const SceneTensor y = clip_onroad(x, {}, p, &rep);
  for (std::size_t i = 1; i < rep.objective.size(); ++i) CHECK(rep.objective[i] <= rep.objective[i - 1]);
  CHECK(rep.objective.back() < 1e-12);
  for (int t = 0; t < 3; ++t) CHECK(y.at(0, t, channel::kX) == x.at(0, t, channel::kX));
  for (int t = 3; t < 10; ++t) CHECK(y.at(0, t, channel::kX) == doctest::Approx(1.0));
  CHECK(max_abs_diff(clip_onroad(y, {}, p), y) < 1e-6);

  OnroadFieldParams empty;
  rep = {};
  CHECK(max_abs_diff(clip_onroad(x, {}, empty, &rep), x) == 0.0);
  CHECK(rep.warnings.size() == 1);
  OnroadFieldParams open;
  open.polygons = {Polygon{{{0, 0}, {1, 0}, {1, 1}}}};
  CHECK_THROWS_AS(ClipOperator{open}, std::invalid_argument);
}

TEST_CASE("constrained step without clips matches denoise_step bitwise") {
  Rng r0(3);
  const SceneShape shape{3, 2, 4};
  const SceneTensor z = trafficdiff::testing::random_tensor(shape, r0);
  const SceneTensor xh = trafficdiff::testing::random_tensor(shape, r0);
  const NoiseVector t = NoiseVector::constant(6, 0.7), s = NoiseVector::constant(6, 0.4);
  Rng a(11), b(11);
  const SceneTensor p = denoise_step(z, xh, s, t, a);
  const SceneTensor q = constrained_denoise_step(z, xh, s, t, {}, {}, b);
  CHECK(max_abs_diff(p, q) == 0.0);

  // Final step returns the clipped prediction exactly.
  const std::vector<ClipOperator> clips{ClipOperator(RangeClip{channel::kWidth, -0.1, 0.1, {}})};
  const SceneTensor fin = constrained_denoise_step(z, xh, NoiseVector::constant(6, 0.0), t, clips, {}, a);
  CHECK(max_abs_diff(fin, apply_clips(xh, clips, {})) == 0.0);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 6; ++k) {
      CHECK(fin.at(i, k, channel::kWidth) >= -0.1);
      CHECK(fin.at(i, k, channel::kWidth) <= 0.1);
    }
}

TEST_CASE("clip composition order is respected") {
  // Range on x after collision pins agent 1 back into the overlap; the
  // reverse order lets collision separate them.
  const SceneTensor x = cars({line({0, 0}, {0, 0}, 2), line({1.0, 0.0}, {0, 0}, 2)});
  const double x1 = kNorm.normalize_position(1.0);
  RangeClip pin{channel::kX, x1, x1, {{1}}};
  CollisionFieldParams col;
  col.selector.agents = {1};
  const std::vector<ClipOperator> range_then_col{ClipOperator(pin), ClipOperator(col)};
  const std::vector<ClipOperator> col_then_range{ClipOperator(col), ClipOperator(pin)};
  const SceneTensor a = post_diffusion_clip(x, range_then_col, {});
  const SceneTensor b = post_diffusion_clip(x, col_then_range, {});
  CHECK(max_abs_diff(a, b) > 1e-3);
  CHECK(b.at(1, 0, channel::kX) == x1);
  CHECK(max_abs_diff(post_diffusion_clip(x, {}, {}), x) == 0.0);
}

TEST_CASE("normalized road polygons") {
  Rng rng(4);
  const RoadGraph g = build_world(WorldTemplate::kStraight, WorldParams{}, rng);
  const auto polys = normalized_polygons(g);
  REQUIRE(polys.size() == g.boundaries.size());
  CHECK(polys[0].closed());
  CHECK(polys[0].points[1].x == doctest::Approx(g.boundaries[0].points[1].x / 80.0));
}
