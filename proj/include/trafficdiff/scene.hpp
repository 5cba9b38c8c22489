// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trafficdiff/rng.hpp"

namespace trafficdiff {

enum class AgentType : int { kAV = 0, kCar = 1, kPedestrian = 2, kCyclist = 3 };

inline constexpr int kAgentTypeCount = 4;

const char* to_string(AgentType type);
AgentType agent_type_from_string(const std::string& name);

// Feature layout along the last scene-tensor axis.
namespace channel {
inline constexpr int kX = 0;
inline constexpr int kY = 1;
inline constexpr int kZ = 2;
inline constexpr int kCos = 3;  // cos(heading)
inline constexpr int kSin = 4;  // sin(heading)
inline constexpr int kLength = 5;
inline constexpr int kWidth = 6;
inline constexpr int kHeight = 7;
inline constexpr int kType = 8;  // 4 one-hot slots: AV, car, pedestrian, cyclist
inline constexpr int kCount = 12;
}  // namespace channel

struct SceneShape {
  int agents = 0;
  int history = 0;
  int future = 0;
  int features = channel::kCount;

  int steps() const { return history + future; }
  std::size_t size() const {
    return static_cast<std::size_t>(agents) * steps() * features;
  }
  friend bool operator==(const SceneShape&, const SceneShape&) = default;
};

// Normalized A x T x D array; step index 0 is the oldest history step and
// index history-1 is the final history step.
class SceneTensor {
 public:
  SceneTensor() = default;
  explicit SceneTensor(SceneShape shape, double fill = 0.0);

  const SceneShape& shape() const { return shape_; }
  int agents() const { return shape_.agents; }
  int history() const { return shape_.history; }
  int future() const { return shape_.future; }
  int steps() const { return shape_.steps(); }
  int features() const { return shape_.features; }
  std::size_t size() const { return values_.size(); }

  std::size_t offset(int agent, int step, int feature = 0) const {
    return (static_cast<std::size_t>(agent) * shape_.steps() + step) *
               shape_.features +
           feature;
  }
  double& at(int agent, int step, int feature) {
    return values_[offset(agent, step, feature)];
  }
  double at(int agent, int step, int feature) const {
    return values_[offset(agent, step, feature)];
  }
  std::span<double> row(int agent, int step) {
    return {values_.data() + offset(agent, step), static_cast<std::size_t>(shape_.features)};
  }
  std::span<const double> row(int agent, int step) const {
    return {values_.data() + offset(agent, step), static_cast<std::size_t>(shape_.features)};
  }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool all_finite() const;

  // Bitwise comparison of shape and values.
  friend bool operator==(const SceneTensor& a, const SceneTensor& b);

 private:
  SceneShape shape_{};
  std::vector<double> values_;
};

// Per (agent, step) validity; broadcast over features.
class ValidityMask {
 public:
  ValidityMask() = default;
  ValidityMask(int agents, int steps, bool value = true);

  int agents() const { return agents_; }
  int steps() const { return steps_; }
  bool operator()(int agent, int step) const {
    return valid_[static_cast<std::size_t>(agent) * steps_ + step] != 0;
  }
  void set(int agent, int step, bool value) {
    valid_[static_cast<std::size_t>(agent) * steps_ + step] = value ? 1 : 0;
  }
  void set_agent(int agent, bool value);
  bool agent_any(int agent) const;
  int valid_steps(int agent) const;
  // 1 for every agent row with at least one valid step.
  std::vector<std::uint8_t> agent_rows() const;
  int valid_agent_count() const;

  friend bool operator==(const ValidityMask&, const ValidityMask&) = default;

 private:
  int agents_ = 0;
  int steps_ = 0;
  std::vector<std::uint8_t> valid_;
};

// Boolean mask with numpy-style broadcasting: each extent is either 1 or
// the full axis length.
class Mask {
 public:
  Mask() = default;
  Mask(int agent_extent, int step_extent, int feature_extent, bool value = false);

  static Mask dense(const SceneShape& shape, bool value = false) {
    return Mask(shape.agents, shape.steps(), shape.features, value);
  }

  int agent_extent() const { return a_; }
  int step_extent() const { return t_; }
  int feature_extent() const { return d_; }

  bool operator()(int agent, int step, int feature) const {
    const int a = a_ == 1 ? 0 : agent;
    const int t = t_ == 1 ? 0 : step;
    const int d = d_ == 1 ? 0 : feature;
    return bits_[(static_cast<std::size_t>(a) * t_ + t) * d_ + d] != 0;
  }
  void set(int agent, int step, int feature, bool value) {
    bits_[(static_cast<std::size_t>(agent) * t_ + step) * d_ + feature] = value ? 1 : 0;
  }

  bool broadcasts_to(const SceneShape& shape) const;
  // Materializes the broadcast to the full (A, T, D) extent.
  Mask expand(const SceneShape& shape) const;
  std::size_t count() const;
  bool any() const { return count() > 0; }
  std::span<const std::uint8_t> bits() const { return bits_; }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  int a_ = 0;
  int t_ = 0;
  int d_ = 0;
  std::vector<std::uint8_t> bits_;
};

// Elementwise AND / OR after broadcasting both masks to `shape`.
Mask mask_and(const Mask& a, const Mask& b, const SceneShape& shape);
Mask mask_or(const Mask& a, const Mask& b, const SceneShape& shape);

// Context values x̄ and the mask selecting which of them are imposed.
struct InpaintingSpec {
  Mask mask;
  SceneTensor context;

  // Empty (all-false) spec for `shape`.
  static InpaintingSpec none(const SceneShape& shape);
  // Throws std::invalid_argument if a masked context entry is non-finite or
  // the mask does not broadcast to the context shape.
  void validate() const;
};

// Raw (world-unit) per-agent, per-step features in the scene-centric frame.
struct AgentFeatures {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double heading = 0.0;
  double length = 0.0;
  double width = 0.0;
  double height = 0.0;
  AgentType type = AgentType::kCar;
};

struct WorldScene {
  SceneShape shape;  // features field unused
  std::vector<AgentFeatures> features;  // agent-major, shape.agents x steps
  ValidityMask validity;

  WorldScene() = default;
  WorldScene(int agents, int history, int future);

  AgentFeatures& at(int agent, int step) {
    return features[static_cast<std::size_t>(agent) * shape.steps() + step];
  }
  const AgentFeatures& at(int agent, int step) const {
    return features[static_cast<std::size_t>(agent) * shape.steps() + step];
  }
};

// Thrown by normalize_scene with the offending index.
class NonFiniteFeature : public std::invalid_argument {
 public:
  NonFiniteFeature(int agent, int step, int feature);
  int agent;
  int step;
  int feature;
};

// Position scale 1/80 per meter; size and type channels use
// f' = (f - mu) / (2 sigma).
struct FeatureNormalizer {
  double position_scale = 1.0 / 80.0;
  double mu_length = 4.5, mu_width = 2.0, mu_height = 1.75, mu_type = 0.5;
  double sigma_length = 2.5, sigma_width = 0.8, sigma_height = 0.6, sigma_type = 0.5;

  double normalize_position(double meters) const { return meters * position_scale; }
  double denormalize_position(double v) const { return v / position_scale; }
  double normalize_length(double m) const { return (m - mu_length) / (2.0 * sigma_length); }
  double denormalize_length(double v) const { return v * (2.0 * sigma_length) + mu_length; }
  double normalize_width(double m) const { return (m - mu_width) / (2.0 * sigma_width); }
  double denormalize_width(double v) const { return v * (2.0 * sigma_width) + mu_width; }
  double normalize_height(double m) const { return (m - mu_height) / (2.0 * sigma_height); }
  double denormalize_height(double v) const { return v * (2.0 * sigma_height) + mu_height; }
  double normalize_type_slot(double onehot) const { return (onehot - mu_type) / (2.0 * sigma_type); }

  // Normalized value for one channel of a raw feature record.
  void encode(const AgentFeatures& f, std::span<double> row) const;
  AgentFeatures decode(std::span<const double> row) const;
};

// Invalid entries are written as zeros. Throws NonFiniteFeature on any
// non-finite valid entry.
SceneTensor normalize_scene(const WorldScene& raw, const FeatureNormalizer& normalizer = {});

// Inverse of normalize_scene. Heading is atan2 of the (cos, sin) pair and the
// type is the argmax of the four one-hot slots.
WorldScene denormalize_scene(const SceneTensor& scene,
                             const FeatureNormalizer& normalizer = {},
                             const std::optional<ValidityMask>& validity = std::nullopt);

// Heading round trip helpers.
std::array<double, 2> encode_heading(double heading);
double decode_heading(double cos_value, double sin_value);

// True exactly on the first `history` of `steps` time indices; shape (1,T,1).
Mask make_bp_mask(int history, int steps);

// Shape (A,1,1). Draws a selection rate u ~ U(0,1) (A_select/A_valid) and
// selects each valid agent independently with probability u.
Mask sample_scenegen_mask(std::span<const std::uint8_t> agent_valid, Rng& rng);

struct ControlRates {
  std::optional<double> agent_rate;  // fixed A_control/A_valid; drawn U(0,1) if unset
  std::optional<double> step_rate;   // fixed T_control/T; drawn U(0,1) if unset
};

// Dense (A,T,D) outer product of Bernoulli draws over agents, steps and
// features. Invalid agent rows are always false.
Mask sample_control_mask(std::span<const std::uint8_t> agent_valid, int steps,
                         std::span<const double> feature_probs, Rng& rng,
                         const ControlRates& rates = {});

// x̄ where the mask is set, x elsewhere.
SceneTensor apply_inpainting(const SceneTensor& x, const InpaintingSpec& spec);

struct ImputeResult {
  SceneTensor scene;
  std::vector<int> skipped_agents;  // agents with no valid step
};

// Fills invalid steps by linear interpolation between the nearest valid
// neighbours and by linear extrapolation from the nearest two valid steps
// at the boundaries (constant with a single valid step).
ImputeResult impute_invalid_steps(const SceneTensor& scene, const ValidityMask& validity);

// Rigid transform of a scene so that `agent` at step `history-1` sits at the
// origin facing +x.
WorldScene to_scene_frame(const WorldScene& raw, int agent);

}  // namespace trafficdiff
