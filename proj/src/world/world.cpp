// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/world.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace trafficdiff {

namespace {
constexpr double kDt = 0.1;  // 10 Hz step grid
}

WorldTemplate world_template_from_string(const std::string& name) {
  if (name == "straight") return WorldTemplate::kStraight;
  if (name == "curve") return WorldTemplate::kCurve;
  if (name == "intersection") return WorldTemplate::kIntersection;
  throw std::invalid_argument("unknown world template: " + name);
}

const char* to_string(WorldTemplate t) {
  switch (t) {
    case WorldTemplate::kStraight: return "straight";
    case WorldTemplate::kCurve: return "curve";
    case WorldTemplate::kIntersection: return "intersection";
  }
  return "straight";
}

const char* to_string(Behavior b) {
  switch (b) {
    case Behavior::kKeep: return "keep";
    case Behavior::kDecelerate: return "decelerate";
    case Behavior::kLaneChange: return "lane_change";
  }
  return "keep";
}

Behavior behavior_from_string(const std::string& name) {
  if (name == "keep") return Behavior::kKeep;
  if (name == "decelerate") return Behavior::kDecelerate;
  if (name == "lane_change") return Behavior::kLaneChange;
  throw std::invalid_argument("unknown behavior: " + name);
}

LanePath::LanePath(Polyline points) : points_(std::move(points)) {
  if (points_.size() < 2) throw std::invalid_argument("lane path needs at least two points");
  cumulative_.assign(points_.size(), 0.0);
  for (std::size_t i = 1; i < points_.size(); ++i)
    cumulative_[i] = cumulative_[i - 1] + norm(points_[i] - points_[i - 1]);
  if (!(cumulative_.back() > 0.0)) throw std::invalid_argument("lane path has zero length");
}

std::size_t LanePath::segment(double s) const {
  if (s <= 0.0) return 0;
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), s);
  const std::size_t i = static_cast<std::size_t>(it - cumulative_.begin());
  return std::min(i == 0 ? 0 : i - 1, points_.size() - 2);
}

Vec2 LanePath::position(double s) const {
  std::size_t i = segment(s);
  // Skip degenerate segments.
  while (i + 2 < points_.size() && cumulative_[i + 1] == cumulative_[i]) ++i;
  const Vec2 a = points_[i];
  const Vec2 b = points_[i + 1];
  const double len = cumulative_[i + 1] - cumulative_[i];
  const double u = (s - cumulative_[i]) / len;
  return a + (b - a) * u;
}

double LanePath::heading(double s) const {
  const std::size_t i = segment(s);
  const Vec2 d = points_[i + 1] - points_[i];
  return std::atan2(d.y, d.x);
}

Vec2 LanePath::normal(double s) const {
  const double h = heading(s);
  return {-std::sin(h), std::cos(h)};
}

namespace {

struct RefSample {
  Vec2 p;
  Vec2 n;  // unit left normal
};

// Reference path (lane 0 centerline) of the template: straight start, then
// an optional left arc and exit straight.
std::vector<RefSample> reference_path(Vec2 start, double heading, double lead_in, double radius,
                                      double angle, double exit) {
  std::vector<RefSample> out;
  const Vec2 dir{std::cos(heading), std::sin(heading)};
  const Vec2 nrm{-std::sin(heading), std::cos(heading)};
  out.push_back({start, nrm});
  const Vec2 arc_start = start + dir * lead_in;
  if (angle <= 0.0) {
    out.push_back({arc_start, nrm});
    return out;
  }
  out.push_back({arc_start, nrm});
  const Vec2 center = arc_start + nrm * radius;
  const int n = std::max(8, static_cast<int>(std::ceil(radius * angle)));
  for (int k = 1; k <= n; ++k) {
    const double phi = angle * k / n;
    const double h = heading + phi;
    const Vec2 nk{-std::sin(h), std::cos(h)};
    out.push_back({center - nk * radius, nk});
  }
  const double h_end = heading + angle;
  const Vec2 dir_end{std::cos(h_end), std::sin(h_end)};
  if (exit > 0.0) out.push_back({out.back().p + dir_end * exit, out.back().n});
  return out;
}

Polyline offset_path(const std::vector<RefSample>& ref, double offset) {
  Polyline line;
  line.reserve(ref.size());
  for (const auto& r : ref) line.push_back(r.p + r.n * offset);
  return line;
}

Polygon band_polygon(const std::vector<RefSample>& ref, double right, double left) {
  std::vector<Vec2> pts = offset_path(ref, right);
  const Polyline l = offset_path(ref, left);
  pts.insert(pts.end(), l.rbegin(), l.rend());
  return close_ring(std::move(pts));
}

}  // namespace

RoadGraph build_world(WorldTemplate tmpl, const WorldParams& params, Rng& rng) {
  if (params.lanes < 1) throw std::invalid_argument("world needs at least one lane");
  if (!(params.lane_width > 0.0)) throw std::invalid_argument("lane width must be positive");
  if (!(params.length > 0.0)) throw std::invalid_argument("road length must be positive");
  const double w = params.lane_width;
  const int n = params.lanes;
  const double right = -0.5 * w;
  const double left = (n - 0.5) * w;
  RoadGraph g;
  auto add_lanes = [&](const std::vector<RefSample>& ref) {
    for (int i = 0; i < n; ++i) g.lanes.push_back(offset_path(ref, i * w));
  };
  switch (tmpl) {
    case WorldTemplate::kStraight: {
      const auto ref = reference_path({params.start_x, 0.0}, 0.0, params.length, 0.0, 0.0, 0.0);
      add_lanes(ref);
      g.boundaries.push_back(band_polygon(ref, right, left));
      break;
    }
    case WorldTemplate::kCurve: {
      if (!(params.curve_radius - left > 0.0))
        throw std::invalid_argument("curve radius too small for the lane count");
      const double lead = -params.start_x;
      if (!(lead > 0.0)) throw std::invalid_argument("curve template needs start_x < 0");
      const double arc = params.curve_radius * params.curve_angle;
      const double exit = std::max(10.0, params.length - lead - arc);
      const auto ref = reference_path({params.start_x, 0.0}, 0.0, lead, params.curve_radius,
                                      params.curve_angle, exit);
      add_lanes(ref);
      g.boundaries.push_back(band_polygon(ref, right, left));
      break;
    }
    case WorldTemplate::kIntersection: {
      const auto ref = reference_path({params.start_x, 0.0}, 0.0, params.length, 0.0, 0.0, 0.0);
      add_lanes(ref);
      const double cx = params.start_x + 0.5 * params.length;
      const double half = 0.5 * params.length;
      const auto vref =
          reference_path({cx, -half}, 0.5 * std::numbers::pi, params.length, 0.0, 0.0, 0.0);
      // Crossing lanes head +y; their left normal points -x, so offsets are
      // negated to place lane j at x = cx + j w.
      for (int j = 0; j < n; ++j) g.lanes.push_back(offset_path(vref, -j * w));
      const double X0 = params.start_x, X1 = params.start_x + params.length;
      const double x0 = cx - 0.5 * w, x1 = cx + (n - 0.5) * w;
      if (!(-half < right && half > left))
        throw std::invalid_argument("intersection too short for the lane count");
      g.boundaries.push_back(close_ring({{X0, right}, {x0, right}, {x0, -half}, {x1, -half},
                                         {x1, right}, {X1, right}, {X1, left}, {x1, left},
                                         {x1, half}, {x0, half}, {x0, left}, {X0, left}}));
      break;
    }
  }
  for (std::size_t i = 0; i < g.lanes.size(); ++i)
    g.lane_speeds.push_back(params.lane_speed +
                            (params.speed_jitter > 0.0
                                 ? rng.uniform(-params.speed_jitter, params.speed_jitter)
                                 : 0.0));
  return g;
}

std::size_t BehaviorMixture::assignment_count() const {
  std::size_t n = 1;
  for (const auto& a : agents) n *= a.behaviors.size();
  return n;
}

double BehaviorMixture::assignment_weight(const std::vector<int>& choice) const {
  if (!joint_weights.empty()) {
    if (joint_weights.size() != assignment_count())
      throw std::invalid_argument("joint weight table size does not match behavior count");
    std::size_t idx = 0;
    for (std::size_t a = 0; a < agents.size(); ++a)
      idx = idx * agents[a].behaviors.size() + static_cast<std::size_t>(choice[a]);
    const double total = std::accumulate(joint_weights.begin(), joint_weights.end(), 0.0);
    return joint_weights[idx] / total;
  }
  double w = 1.0;
  for (std::size_t a = 0; a < agents.size(); ++a) {
    double total = 0.0;
    for (const auto& b : agents[a].behaviors) total += b.weight;
    w *= agents[a].behaviors[choice[a]].weight / total;
  }
  return w;
}

std::vector<AgentFeatures> behavior_mean(const RoadGraph& world, const BehaviorMixture& mixture,
                                         int agent, int behavior_index) {
  const AgentSpec& spec = mixture.agents.at(agent);
  if (spec.lane < 0 || spec.lane >= static_cast<int>(world.lanes.size()))
    throw std::invalid_argument("agent lane out of range");
  const BehaviorOption& opt = spec.behaviors.at(behavior_index);
  const LanePath lane(world.lanes[spec.lane]);
  const double lane_width = mixture.world.lane_width;
  const int H = mixture.history;
  std::vector<AgentFeatures> out(mixture.steps());
  for (int tau = 0; tau < mixture.steps(); ++tau) {
    const double t = (tau - (H - 1)) * kDt;  // seconds since the final history step
    double s = spec.s_ref + spec.speed * t;
    double lateral = 0.0;
    double lateral_rate = 0.0;
    double speed = spec.speed;
    if (t > 0.0) {
      if (opt.behavior == Behavior::kDecelerate) {
        const double t_stop = spec.speed / opt.decel;
        const double te = std::min(t, t_stop);
        s = spec.s_ref + spec.speed * te - 0.5 * opt.decel * te * te;
        speed = std::max(0.0, spec.speed - opt.decel * t);
      } else if (opt.behavior == Behavior::kLaneChange) {
        const double u = std::min(1.0, t / opt.duration);
        const double delta = opt.lane_offset * lane_width;
        lateral = delta * 0.5 * (1.0 - std::cos(std::numbers::pi * u));
        if (u < 1.0)
          lateral_rate = delta * 0.5 * std::numbers::pi / opt.duration *
                         std::sin(std::numbers::pi * u);
      }
    }
    const Vec2 p = lane.position(s) + lane.normal(s) * lateral;
    double heading = lane.heading(s);
    if (lateral_rate != 0.0) heading += std::atan2(lateral_rate, std::max(speed, 0.1));
    AgentFeatures& f = out[tau];
    f.x = p.x;
    f.y = p.y;
    f.z = 0.0;
    f.heading = std::remainder(heading, 2.0 * std::numbers::pi);
    f.length = spec.length;
    f.width = spec.width;
    f.height = spec.height;
    f.type = spec.type;
  }
  return out;
}

namespace {

// Per-channel normalized standard deviation of the noise model.
std::vector<double> channel_std(const NoiseSpec& n, const FeatureNormalizer& norm) {
  std::vector<double> s(channel::kCount);
  s[channel::kX] = s[channel::kY] = n.position_m * norm.position_scale;
  s[channel::kZ] = n.z_m * norm.position_scale;
  s[channel::kCos] = s[channel::kSin] = n.heading;
  s[channel::kLength] = n.size_m / (2.0 * norm.sigma_length);
  s[channel::kWidth] = n.size_m / (2.0 * norm.sigma_width);
  s[channel::kHeight] = n.size_m / (2.0 * norm.sigma_height);
  for (int k = 0; k < kAgentTypeCount; ++k) s[channel::kType + k] = n.type_norm;
  return s;
}

void check_mixture(const BehaviorMixture& m) {
  if (static_cast<int>(m.agents.size()) > m.capacity)
    throw std::invalid_argument("more agents than scene capacity");
  if (m.history < 1 || m.future < 1) throw std::invalid_argument("history and future must be >= 1");
  for (const auto& a : m.agents)
    if (a.behaviors.empty()) throw std::invalid_argument("agent without behaviors");
}

SceneShape mixture_shape(const BehaviorMixture& m) {
  return {m.capacity, m.history, m.future, channel::kCount};
}

}  // namespace

SampledScene sample_scene(const RoadGraph& world, const BehaviorMixture& mixture, Rng& rng) {
  check_mixture(mixture);
  const FeatureNormalizer norm;
  const SceneShape shape = mixture_shape(mixture);
  const int n_agents = static_cast<int>(mixture.agents.size());
  SampledScene out;
  out.behaviors.assign(n_agents, 0);
  if (!mixture.joint_weights.empty()) {
    const std::size_t count = mixture.assignment_count();
    if (mixture.joint_weights.size() != count)
      throw std::invalid_argument("joint weight table size does not match behavior count");
    const double total =
        std::accumulate(mixture.joint_weights.begin(), mixture.joint_weights.end(), 0.0);
    double u = rng.uniform() * total;
    std::size_t idx = 0;
    while (idx + 1 < count && u >= mixture.joint_weights[idx]) u -= mixture.joint_weights[idx++];
    for (int a = n_agents - 1; a >= 0; --a) {
      const std::size_t nb = mixture.agents[a].behaviors.size();
      out.behaviors[a] = static_cast<int>(idx % nb);
      idx /= nb;
    }
  } else {
    for (int a = 0; a < n_agents; ++a) {
      const auto& bs = mixture.agents[a].behaviors;
      double total = 0.0;
      for (const auto& b : bs) total += b.weight;
      double u = rng.uniform() * total;
      int k = 0;
      while (k + 1 < static_cast<int>(bs.size()) && u >= bs[k].weight) u -= bs[k++].weight;
      out.behaviors[a] = k;
    }
  }
  const auto stds = channel_std(mixture.noise, norm);
  out.scene = SceneTensor(shape);
  out.validity = ValidityMask(shape.agents, shape.steps(), false);
  for (int a = 0; a < n_agents; ++a) {
    const auto mean = behavior_mean(world, mixture, a, out.behaviors[a]);
    out.validity.set_agent(a, true);
    for (int tau = 0; tau < shape.steps(); ++tau) {
      auto row = out.scene.row(a, tau);
      norm.encode(mean[tau], row);
      for (int d = 0; d < shape.features; ++d) row[d] += stds[d] * rng.normal();
    }
  }
  out.raw = denormalize_scene(out.scene, norm, out.validity);
  return out;
}

MixtureScenePrior prior_as_mixture(const RoadGraph& world, const BehaviorMixture& mixture,
                                   std::size_t cap) {
  check_mixture(mixture);
  const std::size_t count = mixture.assignment_count();
  if (count > cap)
    throw std::invalid_argument("prior has " + std::to_string(count) +
                                " behavior combinations, above the cap of " + std::to_string(cap) +
                                "; reduce agents or behaviors");
  const FeatureNormalizer norm;
  const SceneShape shape = mixture_shape(mixture);
  const int n_agents = static_cast<int>(mixture.agents.size());
  const auto stds = channel_std(mixture.noise, norm);

  // Precompute normalized means per (agent, behavior).
  std::vector<std::vector<SceneTensor>> means(n_agents);
  for (int a = 0; a < n_agents; ++a)
    for (std::size_t b = 0; b < mixture.agents[a].behaviors.size(); ++b) {
      SceneTensor m(SceneShape{1, mixture.history, mixture.future, channel::kCount});
      const auto raw = behavior_mean(world, mixture, a, static_cast<int>(b));
      for (int tau = 0; tau < shape.steps(); ++tau) norm.encode(raw[tau], m.row(0, tau));
      means[a].push_back(std::move(m));
    }

  SceneTensor variance(shape, mixture.noise.invalid_var);
  for (int a = 0; a < n_agents; ++a)
    for (int tau = 0; tau < shape.steps(); ++tau)
      for (int d = 0; d < shape.features; ++d) variance.at(a, tau, d) = stds[d] * stds[d];

  std::vector<MixtureComponent> comps;
  std::vector<int> choice(n_agents, 0);
  for (std::size_t idx = 0; idx < count; ++idx) {
    std::size_t rem = idx;
    for (int a = n_agents - 1; a >= 0; --a) {
      const std::size_t nb = mixture.agents[a].behaviors.size();
      choice[a] = static_cast<int>(rem % nb);
      rem /= nb;
    }
    const double w = mixture.assignment_weight(choice);
    if (!(w > 0.0)) continue;
    MixtureComponent c{w, SceneTensor(shape), variance};
    for (int a = 0; a < n_agents; ++a) {
      const SceneTensor& m = means[a][choice[a]];
      for (int tau = 0; tau < shape.steps(); ++tau) {
        auto dst = c.mean.row(a, tau);
        auto src = m.row(0, tau);
        std::copy(src.begin(), src.end(), dst.begin());
      }
    }
    comps.push_back(std::move(c));
  }
  return MixtureScenePrior(std::move(comps));
}

BehaviorMixture random_mixture(WorldTemplate tmpl, const WorldParams& params, int capacity,
                               int history, int future, const ScenarioOptions& options, Rng& rng) {
  if (options.agents < 0 || options.agents > capacity)
    throw std::invalid_argument("agent count must be within [0, capacity]");
  BehaviorMixture m;
  m.tmpl = tmpl;
  m.world = params;
  m.capacity = capacity;
  m.history = history;
  m.future = future;
  const int n = params.lanes;
  const int lane_groups = tmpl == WorldTemplate::kIntersection ? 2 : 1;
  const double origin_s = -params.start_x;
  struct Placed {
    int lane;
    double s;
  };
  std::vector<Placed> placed;
  for (int a = 0; a < options.agents; ++a) {
    AgentSpec spec;
    if (a == 0) {
      spec.type = AgentType::kAV;
      spec.lane = 0;
      spec.s_ref = origin_s;
    } else {
      spec.type = rng.bernoulli(options.cyclist_prob) ? AgentType::kCyclist : AgentType::kCar;
      // Rejection sampling for a free spot; falls back to the last draw.
      for (int attempt = 0; attempt < 64; ++attempt) {
        spec.lane = rng.uniform_int(0, n * lane_groups - 1);
        const double base =
            spec.lane < n ? origin_s : 0.5 * params.length;  // crossing lanes start at -L/2
        spec.s_ref = base + rng.uniform(-options.spread, options.spread);
        const bool free = std::none_of(placed.begin(), placed.end(), [&](const Placed& p) {
          return p.lane == spec.lane && std::abs(p.s - spec.s_ref) < options.min_gap;
        });
        if (free) break;
      }
    }
    spec.speed = rng.uniform(options.speed_min, options.speed_max);
    switch (spec.type) {
      case AgentType::kAV:
        spec.length = 4.8, spec.width = 2.0, spec.height = 1.7;
        break;
      case AgentType::kCyclist:
        spec.length = 1.8, spec.width = 0.6, spec.height = 1.7;
        spec.speed *= 0.4;
        break;
      case AgentType::kPedestrian:
        spec.length = 0.6, spec.width = 0.6, spec.height = 1.75;
        spec.speed = 1.4;
        break;
      case AgentType::kCar:
        spec.length = 4.5 * rng.uniform(0.9, 1.1);
        spec.width = 1.9 * rng.uniform(0.95, 1.05);
        spec.height = 1.6 * rng.uniform(0.95, 1.05);
        break;
    }
    spec.behaviors.push_back({Behavior::kKeep, options.keep_weight});
    if (options.decel_weight > 0.0) {
      BehaviorOption d{Behavior::kDecelerate, options.decel_weight};
      spec.behaviors.push_back(d);
    }
    const int in_group = spec.lane % n;
    if (options.lane_change_weight > 0.0 && n > 1) {
      BehaviorOption lc{Behavior::kLaneChange, options.lane_change_weight};
      lc.lane_offset = in_group + 1 < n ? 1 : -1;
      // Crossing lanes are laid out mirrored relative to their left normal.
      if (spec.lane >= n) lc.lane_offset = -lc.lane_offset;
      spec.behaviors.push_back(lc);
    }
    placed.push_back({spec.lane, spec.s_ref});
    m.agents.push_back(std::move(spec));
  }
  return m;
}

std::vector<Vec2> road_points(const RoadGraph& world, double spacing, std::size_t max_points,
                              const FeatureNormalizer& normalizer) {
  std::vector<Vec2> pts;
  auto sample = [&](const std::vector<Vec2>& line) {
    for (std::size_t i = 0; i + 1 < line.size(); ++i) {
      const Vec2 a = line[i], b = line[i + 1];
      const int k = std::max(1, static_cast<int>(std::ceil(norm(b - a) / spacing)));
      for (int j = 0; j < k; ++j) pts.push_back(a + (b - a) * (static_cast<double>(j) / k));
    }
    if (!line.empty()) pts.push_back(line.back());
  };
  for (const auto& poly : world.boundaries) sample(poly.points);
  for (const auto& lane : world.lanes) sample(lane);
  std::vector<Vec2> out;
  const std::size_t stride =
      pts.size() > max_points ? (pts.size() + max_points - 1) / max_points : 1;
  for (std::size_t i = 0; i < pts.size(); i += stride)
    out.push_back({normalizer.normalize_position(pts[i].x), normalizer.normalize_position(pts[i].y)});
  return out;
}

}  // namespace trafficdiff
