// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <variant>
#include <vector>

#include "trafficdiff/diffusion.hpp"
#include "trafficdiff/geometry.hpp"
#include "trafficdiff/scene.hpp"

namespace trafficdiff {

// Which agents a clip touches. Empty = every agent with a valid step.
struct AgentSelector {
  std::vector<int> agents;
  bool selects(int agent) const;
};

struct RangeClip {
  int channel = channel::kLength;
  double min = 0.0;  // normalized
  double max = 0.0;
  AgentSelector selector;
};

struct CollisionFieldParams {
  // Softening constant in 1/(dx^4 + dy^4 + eps).
  double epsilon = 1e-8;
  // Corner-to-center cutoff radius, normalized units.
  double cutoff = 1.5;
  // Largest per-iteration displacement of any waypoint, normalized units.
  double max_step = 0.05;
  // First trial displacement, grown x2 after each accepted iteration.
  double initial_step = 0.005;
  int iterations = 50;
  int max_backtracks = 30;
  // Smallest box extent used for corners, meters.
  double min_extent_m = 0.1;
  AgentSelector selector;
};

struct OnroadFieldParams {
  std::vector<Polygon> polygons;  // normalized coordinates, closed rings
  double onroad_threshold = 0.2;  // only trajectories more than this onroad
  double learning_rate = 0.5;
  int iterations = 10;
  AgentSelector selector;
};

struct ClipReport {
  std::vector<double> objective;  // per descent iteration, starting value first
  bool aborted = false;
  std::vector<std::string> warnings;
  int iterations = 0;
};

enum class ClipKind { kRange, kNonCollision, kOnroad };

class ClipOperator {
 public:
  explicit ClipOperator(RangeClip p);
  explicit ClipOperator(CollisionFieldParams p);
  explicit ClipOperator(OnroadFieldParams p);

  ClipKind kind() const;
  const char* name() const;
  template <typename T>
  const T& params() const { return std::get<T>(params_); }

  SceneTensor apply(const SceneTensor& x, const ValidityMask& validity,
                    ClipReport* report = nullptr) const;

 private:
  std::variant<RangeClip, CollisionFieldParams, OnroadFieldParams> params_;
};

// Elementwise clamp of one channel for the selected agents.
SceneTensor clip_range(const SceneTensor& x, const RangeClip& params, const ValidityMask& validity);

// Collision objective sum_t sum_a sum_corners sum_{a' != a} phi_{a'}(corner).
double collision_objective(const SceneTensor& x, const ValidityMask& validity,
                           const CollisionFieldParams& params);

// Number of (step, pair) oriented-box overlaps among valid agents.
int count_box_overlaps(const SceneTensor& x, const ValidityMask& validity,
                       const FeatureNormalizer& normalizer = {});

// Pushes overlapping agents apart by descending the collision objective
// over a per-agent whole-trajectory translation plus per-waypoint residuals.
// Stops once no selected pair overlaps; the objective never increases.
SceneTensor clip_collision(const SceneTensor& x, const ValidityMask& validity,
                           const CollisionFieldParams& params, ClipReport* report = nullptr);

// Offroad potential: squared distance to the closest boundary point for
// waypoints outside every polygon.
double onroad_objective(const SceneTensor& x, const ValidityMask& validity,
                        const OnroadFieldParams& params);

SceneTensor clip_onroad(const SceneTensor& x, const ValidityMask& validity,
                        const OnroadFieldParams& params, ClipReport* report = nullptr);

// Operators applied in declaration order.
SceneTensor apply_clips(const SceneTensor& x, const std::vector<ClipOperator>& clips,
                        const ValidityMask& validity);

// Ancestral step with x̂ replaced by the composed clip of x̂.
SceneTensor constrained_denoise_step(const SceneTensor& z, const SceneTensor& x_hat,
                                     const NoiseVector& s, const NoiseVector& t,
                                     const std::vector<ClipOperator>& clips,
                                     const ValidityMask& validity, Rng& rng);

// One composed application to a finished sample.
SceneTensor post_diffusion_clip(const SceneTensor& x, const std::vector<ClipOperator>& clips,
                                const ValidityMask& validity);

// Road polygons mapped into normalized coordinates.
std::vector<Polygon> normalized_polygons(const RoadGraph& world,
                                         const FeatureNormalizer& normalizer = {});

}  // namespace trafficdiff
