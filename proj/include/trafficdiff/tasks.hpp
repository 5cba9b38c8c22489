// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "trafficdiff/constraints.hpp"
#include "trafficdiff/denoiser.hpp"
#include "trafficdiff/rollout.hpp"
#include "trafficdiff/scene.hpp"
#include "trafficdiff/text_config.hpp"

namespace trafficdiff {

// time_step counts physical steps relative to the first future step:
// [-H, -1] is history, [0, F) is future.
struct ControlPoint {
  int time_step = 0;
  double x = 0.0;  // meters
  double y = 0.0;
  std::optional<double> heading;  // radians
  int line = 0;  // source position for diagnostics
  int column = 0;

  friend bool operator==(const ControlPoint& a, const ControlPoint& b) {
    return a.time_step == b.time_step && a.x == b.x && a.y == b.y && a.heading == b.heading;
  }
};

struct AgentDirective {
  AgentType type = AgentType::kCar;
  std::optional<int> slot;  // explicit slot; otherwise the lowest invalid one
  std::vector<ControlPoint> points;
  int line = 0;
  int column = 0;

  friend bool operator==(const AgentDirective& a, const AgentDirective& b) {
    return a.type == b.type && a.slot == b.slot && a.points == b.points;
  }
};

enum class ConstraintFeature { kX, kY, kZ, kLength, kWidth, kHeight };

ConstraintFeature constraint_feature_from_string(const std::string& name);
const char* to_string(ConstraintFeature feature);

struct HardConstraint {
  ClipKind kind = ClipKind::kNonCollision;
  ConstraintFeature feature = ConstraintFeature::kLength;  // RANGE only
  double min = 0.0;  // RANGE only, world units
  double max = 0.0;
  std::vector<int> agents;  // empty = all
  std::optional<double> epsilon;   // NON_COLLISION only
  std::optional<int> iterations;   // NON_COLLISION / ONROAD

  friend bool operator==(const HardConstraint&, const HardConstraint&) = default;
};

struct ConstraintConfig {
  std::vector<AgentDirective> agents;
  std::vector<HardConstraint> constraints;

  friend bool operator==(const ConstraintConfig&, const ConstraintConfig&) = default;
};

// Throws ConfigError with line/column on malformed input.
ConstraintConfig parse_constraint_config(const std::string& text);
// Canonical text form; parse(serialize(c)) == c.
std::string serialize_constraint_config(const ConstraintConfig& config);

struct CompiledConstraints {
  InpaintingSpec inpaint;
  std::vector<ClipOperator> clips;
  ValidityMask validity;        // input validity plus injected agent slots
  std::vector<int> slots;       // slot assigned to each agent directive
};

// Control points become inpainting entries on the x, y, type (and heading
// if given) channels of their slot; hard constraints become clip operators.
// `world` supplies ONROAD polygons (identity when null).
CompiledConstraints compile_constraints(const ConstraintConfig& config, const SceneShape& shape,
                                        const ValidityMask& validity,
                                        const RoadGraph* world = nullptr,
                                        const FeatureNormalizer& normalizer = {});
CompiledConstraints compile_constraint_config(const std::string& text, const SceneShape& shape,
                                              const ValidityMask& validity,
                                              const RoadGraph* world = nullptr);

enum class TaskKind { kScenegen, kBp, kConditionalScenegen, kConditionalBp, kLogPerturb };

TaskKind task_kind_from_string(const std::string& name);
const char* to_string(TaskKind kind);

struct TaskSpec {
  TaskKind kind = TaskKind::kScenegen;
  std::optional<double> perturb_level;  // present iff kind == kLogPerturb
  int samples = 1;
  int denoise_steps = 16;
  GridSpacing spacing = GridSpacing::kUniform;
  SamplerKind sampler = SamplerKind::kAncestral;
  std::uint64_t seed = 0;
  std::vector<ClipOperator> clips;
  bool clip_in_diffusion = true;  // false: one post-diffusion application
  int workers = 1;

  void validate() const;
};

struct TaskResult {
  std::vector<SceneTensor> samples;
  std::uint64_t nfe = 0;
};

// K independent reverse chains over the full horizon. `ctx.inpaint` carries
// context/control entries; behavior-prediction kinds additionally fix the
// history of `log` under the history mask.
TaskResult run_scenegen(const SceneTensor& log, const ConditioningContext& ctx,
                        const TaskSpec& spec, const Denoiser& denoiser);

// Noises `log` to level t* and runs the grid truncated to levels <= t*.
TaskResult run_log_perturbation(const SceneTensor& log, const ConditioningContext& ctx,
                                const TaskSpec& spec, const Denoiser& denoiser);

// Mean (x, y) distance in meters between two scenes over valid entries.
double mean_displacement(const SceneTensor& a, const SceneTensor& b, const ValidityMask& validity,
                         const FeatureNormalizer& normalizer = {});

// Largest control-point position error in meters.
double control_point_error(const SceneTensor& scene, const ConstraintConfig& config,
                           const CompiledConstraints& compiled,
                           const FeatureNormalizer& normalizer = {});

}  // namespace trafficdiff
