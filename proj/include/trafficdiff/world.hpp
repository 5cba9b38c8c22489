// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trafficdiff/denoiser.hpp"
#include "trafficdiff/geometry.hpp"
#include "trafficdiff/rng.hpp"
#include "trafficdiff/scene.hpp"

namespace trafficdiff {

enum class WorldTemplate { kStraight, kCurve, kIntersection };

WorldTemplate world_template_from_string(const std::string& name);
const char* to_string(WorldTemplate t);

struct WorldParams {
  int lanes = 2;
  double lane_width = 3.5;
  double length = 260.0;     // centerline length of lane 0
  double start_x = -80.0;    // x of the road start
  double curve_radius = 60.0;
  double curve_angle = 1.5707963267948966;
  double lane_speed = 10.0;  // nominal m/s
  double speed_jitter = 0.0; // per-lane uniform jitter on nominal speeds (m/s)
};

// Lanes are numbered 0..lanes-1 from the right; lane 0 passes through the
// origin heading +x. The intersection template adds `lanes` crossing lanes
// (indices lanes..2*lanes-1) heading +y.
RoadGraph build_world(WorldTemplate tmpl, const WorldParams& params, Rng& rng);

// Arc-length parameterized lane with linear extrapolation past both ends.
class LanePath {
 public:
  explicit LanePath(Polyline points);
  Vec2 position(double s) const;
  double heading(double s) const;
  // Unit left normal at s.
  Vec2 normal(double s) const;
  double length() const { return cumulative_.back(); }

 private:
  std::size_t segment(double s) const;
  Polyline points_;
  std::vector<double> cumulative_;
};

enum class Behavior { kKeep, kDecelerate, kLaneChange };

const char* to_string(Behavior b);
Behavior behavior_from_string(const std::string& name);

struct BehaviorOption {
  Behavior behavior = Behavior::kKeep;
  double weight = 1.0;
  double decel = 3.0;          // m/s^2, decelerate only
  int lane_offset = 1;         // lane change only: +1 left, -1 right
  double duration = 3.0;       // lane change only, seconds
};

struct AgentSpec {
  AgentType type = AgentType::kCar;
  int lane = 0;
  double s_ref = 0.0;   // arc length at the final history step
  double speed = 10.0;  // m/s during history
  double length = 4.5, width = 1.9, height = 1.6;
  std::vector<BehaviorOption> behaviors;
};

// Per-entry Gaussian noise around behavior means (diagonal).
struct NoiseSpec {
  double position_m = 0.02;
  double z_m = 0.01;
  double heading = 0.005;       // on each of cos/sin
  double size_m = 0.02;         // on length/width/height
  double type_norm = 0.01;      // on normalized one-hot slots
  double invalid_var = 1e-8;    // normalized variance of unused slots
};

struct BehaviorMixture {
  WorldTemplate tmpl = WorldTemplate::kStraight;
  WorldParams world;
  int capacity = 8;   // agent slots A
  int history = 11;
  int future = 80;
  std::vector<AgentSpec> agents;  // agents.size() <= capacity
  NoiseSpec noise;
  // Optional joint weights over behavior assignments, indexed with agent 0
  // as the most significant digit. Empty means independent product weights.
  std::vector<double> joint_weights;

  int steps() const { return history + future; }
  std::size_t assignment_count() const;
  // Weight of one joint assignment.
  double assignment_weight(const std::vector<int>& choice) const;
};

// Mean raw features of one agent following one behavior, all steps.
std::vector<AgentFeatures> behavior_mean(const RoadGraph& world, const BehaviorMixture& mixture,
                                         int agent, int behavior_index);

struct SampledScene {
  WorldScene raw;
  SceneTensor scene;
  ValidityMask validity;
  std::vector<int> behaviors;  // chosen behavior index per agent
};

SampledScene sample_scene(const RoadGraph& world, const BehaviorMixture& mixture, Rng& rng);

// All joint behavior assignments as a normalized-space Gaussian mixture.
// Throws std::invalid_argument if the assignment count exceeds `cap`.
MixtureScenePrior prior_as_mixture(const RoadGraph& world, const BehaviorMixture& mixture,
                                   std::size_t cap = 27);

struct ScenarioOptions {
  int agents = 4;
  double speed_min = 6.0;
  double speed_max = 14.0;
  double spread = 35.0;        // |s_ref| range of non-AV agents (m)
  double min_gap = 10.0;       // same-lane spacing at the final history step (m)
  double keep_weight = 0.5;
  double decel_weight = 0.25;
  double lane_change_weight = 0.25;
  double cyclist_prob = 0.0;
};

// Random agent layout; agent 0 is the AV on lane 0 at the origin.
BehaviorMixture random_mixture(WorldTemplate tmpl, const WorldParams& params, int capacity,
                               int history, int future, const ScenarioOptions& options, Rng& rng);

// Boundary and lane sample points spaced about `spacing` meters apart, in
// normalized coordinates, at most `max_points`.
std::vector<Vec2> road_points(const RoadGraph& world, double spacing = 5.0,
                              std::size_t max_points = 128,
                              const FeatureNormalizer& normalizer = {});

}  // namespace trafficdiff
