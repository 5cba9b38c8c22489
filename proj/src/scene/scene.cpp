// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/scene.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>

#include "trafficdiff/simd/kernels.hpp"

namespace trafficdiff {

const char* to_string(AgentType type) {
  switch (type) {
    case AgentType::kAV: return "AV";
    case AgentType::kCar: return "CAR";
    case AgentType::kPedestrian: return "PEDESTRIAN";
    case AgentType::kCyclist: return "CYCLIST";
  }
  return "CAR";
}

AgentType agent_type_from_string(const std::string& name) {
  std::string up(name);
  for (char& c : up) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (up == "AV" || up == "SDC") return AgentType::kAV;
  if (up == "CAR" || up == "VEHICLE") return AgentType::kCar;
  if (up == "PEDESTRIAN" || up == "PED") return AgentType::kPedestrian;
  if (up == "CYCLIST" || up == "BICYCLE") return AgentType::kCyclist;
  throw std::invalid_argument("unknown agent type: " + name);
}

SceneTensor::SceneTensor(SceneShape shape, double fill) : shape_(shape) {
  if (shape.agents < 0 || shape.history < 0 || shape.future < 0 || shape.features <= 0)
    throw std::invalid_argument("scene shape extents must be non-negative");
  values_.assign(shape.size(), fill);
}

bool SceneTensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

bool operator==(const SceneTensor& a, const SceneTensor& b) {
  if (!(a.shape_ == b.shape_)) return false;
  return a.values_.empty() ||
         std::memcmp(a.values_.data(), b.values_.data(),
                     a.values_.size() * sizeof(double)) == 0;
}

ValidityMask::ValidityMask(int agents, int steps, bool value)
    : agents_(agents), steps_(steps),
      valid_(static_cast<std::size_t>(agents) * steps, value ? 1 : 0) {
  if (agents < 0 || steps < 0) throw std::invalid_argument("negative validity extent");
}

void ValidityMask::set_agent(int agent, bool value) {
  std::fill_n(valid_.begin() + static_cast<std::ptrdiff_t>(agent) * steps_, steps_,
              value ? 1 : 0);
}

bool ValidityMask::agent_any(int agent) const { return valid_steps(agent) > 0; }

int ValidityMask::valid_steps(int agent) const {
  int n = 0;
  for (int t = 0; t < steps_; ++t) n += (*this)(agent, t) ? 1 : 0;
  return n;
}

std::vector<std::uint8_t> ValidityMask::agent_rows() const {
  std::vector<std::uint8_t> rows(agents_);
  for (int a = 0; a < agents_; ++a) rows[a] = agent_any(a) ? 1 : 0;
  return rows;
}

int ValidityMask::valid_agent_count() const {
  int n = 0;
  for (int a = 0; a < agents_; ++a) n += agent_any(a) ? 1 : 0;
  return n;
}

Mask::Mask(int agent_extent, int step_extent, int feature_extent, bool value)
    : a_(agent_extent), t_(step_extent), d_(feature_extent),
      bits_(static_cast<std::size_t>(agent_extent) * step_extent * feature_extent,
            value ? 1 : 0) {
  if (agent_extent < 0 || step_extent < 0 || feature_extent < 0)
    throw std::invalid_argument("negative mask extent");
}

bool Mask::broadcasts_to(const SceneShape& shape) const {
  auto ok = [](int e, int n) { return e == n || e == 1; };
  return ok(a_, shape.agents) && ok(t_, shape.steps()) && ok(d_, shape.features);
}

Mask Mask::expand(const SceneShape& shape) const {
  if (!broadcasts_to(shape))
    throw std::invalid_argument("mask does not broadcast to scene shape");
  Mask out = dense(shape);
  for (int a = 0; a < shape.agents; ++a)
    for (int t = 0; t < shape.steps(); ++t)
      for (int d = 0; d < shape.features; ++d) out.set(a, t, d, (*this)(a, t, d));
  return out;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(bits_.begin(), bits_.end(),
                                                [](std::uint8_t b) { return b != 0; }));
}

namespace {

Mask combine(const Mask& a, const Mask& b, const SceneShape& shape, bool conj) {
  const Mask ea = a.expand(shape);
  const Mask eb = b.expand(shape);
  Mask out = Mask::dense(shape);
  for (int i = 0; i < shape.agents; ++i)
    for (int t = 0; t < shape.steps(); ++t)
      for (int d = 0; d < shape.features; ++d) {
        const bool x = ea(i, t, d);
        const bool y = eb(i, t, d);
        out.set(i, t, d, conj ? (x && y) : (x || y));
      }
  return out;
}

}  // namespace

Mask mask_and(const Mask& a, const Mask& b, const SceneShape& shape) {
  return combine(a, b, shape, true);
}

Mask mask_or(const Mask& a, const Mask& b, const SceneShape& shape) {
  return combine(a, b, shape, false);
}

InpaintingSpec InpaintingSpec::none(const SceneShape& shape) {
  return {Mask(1, 1, 1, false), SceneTensor(shape)};
}

void InpaintingSpec::validate() const {
  const SceneShape& shape = context.shape();
  if (!mask.broadcasts_to(shape))
    throw std::invalid_argument("inpainting mask does not broadcast to context shape");
  for (int a = 0; a < shape.agents; ++a)
    for (int t = 0; t < shape.steps(); ++t)
      for (int d = 0; d < shape.features; ++d)
        if (mask(a, t, d) && !std::isfinite(context.at(a, t, d)))
          throw std::invalid_argument("non-finite context value under inpainting mask");
}

WorldScene::WorldScene(int agents, int history, int future)
    : shape{agents, history, future, channel::kCount},
      features(static_cast<std::size_t>(agents) * (history + future)),
      validity(agents, history + future, false) {}

NonFiniteFeature::NonFiniteFeature(int a, int s, int f)
    : std::invalid_argument("non-finite feature at agent " + std::to_string(a) +
                            ", step " + std::to_string(s) + ", feature " +
                            std::to_string(f)),
      agent(a), step(s), feature(f) {}

std::array<double, 2> encode_heading(double heading) {
  return {std::cos(heading), std::sin(heading)};
}

double decode_heading(double cos_value, double sin_value) {
  // atan2 is scale invariant, so this equals decoding the renormalized pair.
  if (cos_value == 0.0 && sin_value == 0.0) return 0.0;
  return std::atan2(sin_value, cos_value);
}

void FeatureNormalizer::encode(const AgentFeatures& f, std::span<double> row) const {
  row[channel::kX] = normalize_position(f.x);
  row[channel::kY] = normalize_position(f.y);
  row[channel::kZ] = normalize_position(f.z);
  const auto [c, s] = encode_heading(f.heading);
  row[channel::kCos] = c;
  row[channel::kSin] = s;
  row[channel::kLength] = normalize_length(f.length);
  row[channel::kWidth] = normalize_width(f.width);
  row[channel::kHeight] = normalize_height(f.height);
  for (int k = 0; k < kAgentTypeCount; ++k)
    row[channel::kType + k] = normalize_type_slot(static_cast<int>(f.type) == k ? 1.0 : 0.0);
}

AgentFeatures FeatureNormalizer::decode(std::span<const double> row) const {
  AgentFeatures f;
  f.x = denormalize_position(row[channel::kX]);
  f.y = denormalize_position(row[channel::kY]);
  f.z = denormalize_position(row[channel::kZ]);
  f.heading = decode_heading(row[channel::kCos], row[channel::kSin]);
  f.length = denormalize_length(row[channel::kLength]);
  f.width = denormalize_width(row[channel::kWidth]);
  f.height = denormalize_height(row[channel::kHeight]);
  int best = 0;
  for (int k = 1; k < kAgentTypeCount; ++k)
    if (row[channel::kType + k] > row[channel::kType + best]) best = k;
  f.type = static_cast<AgentType>(best);
  return f;
}

SceneTensor normalize_scene(const WorldScene& raw, const FeatureNormalizer& normalizer) {
  const SceneShape shape{raw.shape.agents, raw.shape.history, raw.shape.future,
                         channel::kCount};
  SceneTensor out(shape);
  for (int a = 0; a < shape.agents; ++a) {
    for (int t = 0; t < shape.steps(); ++t) {
      if (!raw.validity(a, t)) continue;
      const AgentFeatures& f = raw.at(a, t);
      const double vals[] = {f.x, f.y, f.z, f.heading, f.length, f.width, f.height};
      const int channels[] = {channel::kX, channel::kY, channel::kZ, channel::kCos,
                              channel::kLength, channel::kWidth, channel::kHeight};
      for (int i = 0; i < 7; ++i)
        if (!std::isfinite(vals[i])) throw NonFiniteFeature(a, t, channels[i]);
      normalizer.encode(f, out.row(a, t));
    }
  }
  return out;
}

WorldScene denormalize_scene(const SceneTensor& scene, const FeatureNormalizer& normalizer,
                             const std::optional<ValidityMask>& validity) {
  WorldScene out(scene.agents(), scene.history(), scene.future());
  out.validity = validity ? *validity : ValidityMask(scene.agents(), scene.steps(), true);
  for (int a = 0; a < scene.agents(); ++a)
    for (int t = 0; t < scene.steps(); ++t)
      out.at(a, t) = normalizer.decode(scene.row(a, t));
  return out;
}

Mask make_bp_mask(int history, int steps) {
  if (history <= 0 || history >= steps)
    throw std::invalid_argument("behavior-prediction mask needs 0 < H < T");
  Mask m(1, steps, 1, false);
  for (int t = 0; t < history; ++t) m.set(0, t, 0, true);
  return m;
}

Mask sample_scenegen_mask(std::span<const std::uint8_t> agent_valid, Rng& rng) {
  const int agents = static_cast<int>(agent_valid.size());
  Mask m(agents, 1, 1, false);
  const double rate = rng.uniform();
  for (int a = 0; a < agents; ++a) {
    const bool pick = rng.bernoulli(rate);
    if (agent_valid[a]) m.set(a, 0, 0, pick);
  }
  return m;
}

Mask sample_control_mask(std::span<const std::uint8_t> agent_valid, int steps,
                         std::span<const double> feature_probs, Rng& rng,
                         const ControlRates& rates) {
  for (double p : feature_probs)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("control feature probability outside [0,1]");
  const int agents = static_cast<int>(agent_valid.size());
  const int features = static_cast<int>(feature_probs.size());
  const double agent_rate = rates.agent_rate ? *rates.agent_rate : rng.uniform();
  const double step_rate = rates.step_rate ? *rates.step_rate : rng.uniform();
  std::vector<std::uint8_t> ia(agents), it(steps), id(features);
  for (int a = 0; a < agents; ++a) ia[a] = rng.bernoulli(agent_rate) && agent_valid[a];
  for (int t = 0; t < steps; ++t) it[t] = rng.bernoulli(step_rate);
  for (int d = 0; d < features; ++d) id[d] = rng.bernoulli(feature_probs[d]);
  Mask m(agents, steps, features, false);
  for (int a = 0; a < agents; ++a)
    for (int t = 0; t < steps; ++t)
      for (int d = 0; d < features; ++d) m.set(a, t, d, ia[a] && it[t] && id[d]);
  return m;
}

SceneTensor apply_inpainting(const SceneTensor& x, const InpaintingSpec& spec) {
  if (!(spec.context.shape() == x.shape()))
    throw std::invalid_argument("inpainting context shape differs from scene shape");
  const Mask dense = spec.mask.expand(x.shape());
  SceneTensor out(x.shape());
  simd::active().select(x.size(), dense.bits().data(), spec.context.values().data(),
                        x.values().data(), out.values().data());
  return out;
}

ImputeResult impute_invalid_steps(const SceneTensor& scene, const ValidityMask& validity) {
  ImputeResult result{scene, {}};
  SceneTensor& out = result.scene;
  const int steps = scene.steps();
  for (int a = 0; a < scene.agents(); ++a) {
    std::vector<int> valid;
    for (int t = 0; t < steps; ++t)
      if (validity(a, t)) valid.push_back(t);
    if (valid.empty()) {
      result.skipped_agents.push_back(a);
      continue;
    }
    for (int d = 0; d < scene.features(); ++d) {
      auto line = [&](int t0, int t1, int t) {
        const double v0 = scene.at(a, t0, d);
        const double v1 = scene.at(a, t1, d);
        return v0 + (v1 - v0) * static_cast<double>(t - t0) / static_cast<double>(t1 - t0);
      };
      std::size_t next = 0;
      for (int t = 0; t < steps; ++t) {
        while (next < valid.size() && valid[next] < t) ++next;
        if (next < valid.size() && valid[next] == t) continue;
        double v;
        if (valid.size() == 1) {
          v = scene.at(a, valid[0], d);
        } else if (next == 0) {
          v = line(valid[0], valid[1], t);
        } else if (next == valid.size()) {
          v = line(valid[valid.size() - 2], valid.back(), t);
        } else {
          v = line(valid[next - 1], valid[next], t);
        }
        out.at(a, t, d) = v;
      }
    }
  }
  return result;
}

WorldScene to_scene_frame(const WorldScene& raw, int agent) {
  const int ref_step = raw.shape.history - 1;
  if (agent < 0 || agent >= raw.shape.agents || ref_step < 0)
    throw std::invalid_argument("reference agent or history out of range");
  if (!raw.validity(agent, ref_step))
    throw std::invalid_argument("reference agent invalid at final history step");
  const AgentFeatures origin = raw.at(agent, ref_step);
  const double c = std::cos(-origin.heading);
  const double s = std::sin(-origin.heading);
  WorldScene out = raw;
  for (auto& f : out.features) {
    const double dx = f.x - origin.x;
    const double dy = f.y - origin.y;
    f.x = c * dx - s * dy;
    f.y = s * dx + c * dy;
    f.z -= origin.z;
    f.heading = std::remainder(f.heading - origin.heading, 2.0 * std::numbers::pi);
  }
  return out;
}

}  // namespace trafficdiff
