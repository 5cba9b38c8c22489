// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/constraints.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trafficdiff {

bool AgentSelector::selects(int agent) const {
  return agents.empty() || std::find(agents.begin(), agents.end(), agent) != agents.end();
}

ClipOperator::ClipOperator(RangeClip p) : params_(std::move(p)) {
  const auto& r = std::get<RangeClip>(params_);
  if (r.min > r.max) throw std::invalid_argument("range clip needs min <= max");
  if (r.channel < 0) throw std::invalid_argument("range clip channel must be >= 0");
}

ClipOperator::ClipOperator(CollisionFieldParams p) : params_(std::move(p)) {
  const auto& c = std::get<CollisionFieldParams>(params_);
  if (!(c.epsilon > 0.0)) throw std::invalid_argument("collision epsilon must be > 0");
  if (!(c.cutoff > 0.0) || !(c.max_step > 0.0) || c.iterations < 0)
    throw std::invalid_argument("invalid collision field parameters");
}

ClipOperator::ClipOperator(OnroadFieldParams p) : params_(std::move(p)) {
  for (const auto& poly : std::get<OnroadFieldParams>(params_).polygons)
    if (!poly.closed()) throw std::invalid_argument("onroad polygons must be closed rings");
}

ClipKind ClipOperator::kind() const {
  switch (params_.index()) {
    case 0: return ClipKind::kRange;
    case 1: return ClipKind::kNonCollision;
    default: return ClipKind::kOnroad;
  }
}

const char* ClipOperator::name() const {
  switch (kind()) {
    case ClipKind::kRange: return "RANGE";
    case ClipKind::kNonCollision: return "NON_COLLISION";
    case ClipKind::kOnroad: return "ONROAD";
  }
  return "RANGE";
}

SceneTensor ClipOperator::apply(const SceneTensor& x, const ValidityMask& validity,
                                ClipReport* report) const {
  switch (kind()) {
    case ClipKind::kRange: return clip_range(x, std::get<RangeClip>(params_), validity);
    case ClipKind::kNonCollision:
      return clip_collision(x, validity, std::get<CollisionFieldParams>(params_), report);
    case ClipKind::kOnroad:
      return clip_onroad(x, validity, std::get<OnroadFieldParams>(params_), report);
  }
  return x;
}

namespace {

bool has_validity(const SceneTensor& x, const ValidityMask& v) {
  return v.agents() == x.agents() && v.steps() == x.steps();
}

bool valid_at(const SceneTensor& x, const ValidityMask& v, int a, int t) {
  return !has_validity(x, v) || v(a, t);
}

}  // namespace

SceneTensor clip_range(const SceneTensor& x, const RangeClip& params, const ValidityMask& validity) {
  if (params.min > params.max) throw std::invalid_argument("range clip needs min <= max");
  if (params.channel >= x.features()) throw std::invalid_argument("range clip channel out of range");
  SceneTensor out = x;
  for (int a = 0; a < x.agents(); ++a) {
    if (!params.selector.selects(a)) continue;
    for (int t = 0; t < x.steps(); ++t) {
      if (!valid_at(x, validity, a, t)) continue;
      double& v = out.at(a, t, params.channel);
      v = std::min(std::max(v, params.min), params.max);
    }
  }
  return out;
}

namespace {

// Corner offsets (relative to the center) of every (agent, step) box in
// normalized units, rotated by the box heading.
struct BoxFrame {
  std::vector<std::array<Vec2, 4>> offsets;  // agent-major
  std::vector<OrientedBox> shapes;           // same boxes centered at the origin
  int steps = 0;
  const std::array<Vec2, 4>& at(int a, int t) const {
    return offsets[static_cast<std::size_t>(a) * steps + t];
  }
};

BoxFrame box_offsets(const SceneTensor& x, double min_extent_m) {
  const FeatureNormalizer norm;
  BoxFrame f;
  f.steps = x.steps();
  f.offsets.resize(static_cast<std::size_t>(x.agents()) * x.steps());
  f.shapes.resize(f.offsets.size());
  for (int a = 0; a < x.agents(); ++a)
    for (int t = 0; t < x.steps(); ++t) {
      const double h = decode_heading(x.at(a, t, channel::kCos), x.at(a, t, channel::kSin));
      const double l = std::max(min_extent_m, norm.denormalize_length(x.at(a, t, channel::kLength)));
      const double w = std::max(min_extent_m, norm.denormalize_width(x.at(a, t, channel::kWidth)));
      OrientedBox box{{0.0, 0.0}, h, norm.normalize_position(l), norm.normalize_position(w)};
      f.offsets[static_cast<std::size_t>(a) * f.steps + t] = box.corners();
      f.shapes[static_cast<std::size_t>(a) * f.steps + t] = box;
    }
  return f;
}

struct Active {
  std::vector<std::uint8_t> valid;  // agent-major (agent, step)
  std::vector<std::uint8_t> selected;
  int steps = 0;
  bool ok(int a, int t) const { return valid[static_cast<std::size_t>(a) * steps + t] != 0; }
};

Active active_entries(const SceneTensor& x, const ValidityMask& validity, const AgentSelector& sel) {
  Active act;
  act.steps = x.steps();
  act.valid.assign(static_cast<std::size_t>(x.agents()) * x.steps(), 0);
  act.selected.assign(x.agents(), 0);
  for (int a = 0; a < x.agents(); ++a) {
    act.selected[a] = sel.selects(a) ? 1 : 0;
    for (int t = 0; t < x.steps(); ++t)
      act.valid[static_cast<std::size_t>(a) * x.steps() + t] = valid_at(x, validity, a, t) ? 1 : 0;
  }
  return act;
}

// Objective and (optionally) its gradient w.r.t. (x, y) of every entry.
double collision_eval(const std::vector<Vec2>& pos, const BoxFrame& boxes, const Active& act,
                      int agents, const CollisionFieldParams& p, std::vector<Vec2>* grad) {
  const int T = act.steps;
  if (grad) grad->assign(pos.size(), Vec2{});
  double total = 0.0;
  const double cutoff2 = p.cutoff * p.cutoff;
  for (int t = 0; t < T; ++t)
    for (int a = 0; a < agents; ++a) {
      if (!act.ok(a, t)) continue;
      const Vec2 ca = pos[static_cast<std::size_t>(a) * T + t];
      for (const Vec2& off : boxes.at(a, t)) {
        const Vec2 corner = ca + off;
        for (int b = 0; b < agents; ++b) {
          if (b == a || !act.ok(b, t)) continue;
          // A pair only matters if one side is selected for modification.
          if (!act.selected[a] && !act.selected[b]) continue;
          const Vec2 d = corner - pos[static_cast<std::size_t>(b) * T + t];
          if (d.x * d.x + d.y * d.y >= cutoff2) continue;
          const double dx2 = d.x * d.x, dy2 = d.y * d.y;
          const double phi = 1.0 / (dx2 * dx2 + dy2 * dy2 + p.epsilon);
          total += phi;
          if (grad) {
            const Vec2 g{-phi * phi * 4.0 * dx2 * d.x, -phi * phi * 4.0 * dy2 * d.y};
            (*grad)[static_cast<std::size_t>(a) * T + t] =
                (*grad)[static_cast<std::size_t>(a) * T + t] + g;
            (*grad)[static_cast<std::size_t>(b) * T + t] =
                (*grad)[static_cast<std::size_t>(b) * T + t] - g;
          }
        }
      }
    }
  return total;
}

std::vector<Vec2> positions(const SceneTensor& x) {
  std::vector<Vec2> pos(static_cast<std::size_t>(x.agents()) * x.steps());
  for (int a = 0; a < x.agents(); ++a)
    for (int t = 0; t < x.steps(); ++t)
      pos[static_cast<std::size_t>(a) * x.steps() + t] = {x.at(a, t, channel::kX),
                                                          x.at(a, t, channel::kY)};
  return pos;
}

bool any_overlap(const std::vector<Vec2>& pos, const BoxFrame& boxes, const Active& act,
                 int agents) {
  const int T = act.steps;
  for (int t = 0; t < T; ++t)
    for (int a = 0; a < agents; ++a) {
      if (!act.ok(a, t)) continue;
      for (int b = a + 1; b < agents; ++b) {
        if (!act.ok(b, t) || (!act.selected[a] && !act.selected[b])) continue;
        OrientedBox ba = boxes.shapes[static_cast<std::size_t>(a) * T + t];
        OrientedBox bb = boxes.shapes[static_cast<std::size_t>(b) * T + t];
        ba.center = pos[static_cast<std::size_t>(a) * T + t];
        bb.center = pos[static_cast<std::size_t>(b) * T + t];
        // Coarse reject: farther apart than the sum of half-diagonals.
        const double reach = 0.5 * (std::hypot(ba.length, ba.width) + std::hypot(bb.length, bb.width));
        if (norm(ba.center - bb.center) >= reach) continue;
        if (boxes_overlap(ba, bb)) return true;
      }
    }
  return false;
}

}  // namespace

double collision_objective(const SceneTensor& x, const ValidityMask& validity,
                           const CollisionFieldParams& params) {
  const BoxFrame boxes = box_offsets(x, params.min_extent_m);
  const Active act = active_entries(x, validity, params.selector);
  return collision_eval(positions(x), boxes, act, x.agents(), params, nullptr);
}

int count_box_overlaps(const SceneTensor& x, const ValidityMask& validity,
                       const FeatureNormalizer& normalizer) {
  int count = 0;
  std::vector<OrientedBox> boxes(x.agents());
  for (int t = 0; t < x.steps(); ++t) {
    for (int a = 0; a < x.agents(); ++a) {
      const auto f = normalizer.decode(x.row(a, t));
      boxes[a] = {{f.x, f.y}, f.heading, f.length, f.width};
    }
    for (int a = 0; a < x.agents(); ++a) {
      if (!valid_at(x, validity, a, t)) continue;
      for (int b = a + 1; b < x.agents(); ++b)
        if (valid_at(x, validity, b, t) && boxes_overlap(boxes[a], boxes[b])) ++count;
    }
  }
  return count;
}

SceneTensor clip_collision(const SceneTensor& x, const ValidityMask& validity,
                           const CollisionFieldParams& params, ClipReport* report) {
  ClipReport local;
  ClipReport& rep = report ? *report : local;
  rep = ClipReport();
  const int A = x.agents();
  const int T = x.steps();
  const BoxFrame boxes = box_offsets(x, params.min_extent_m);
  const Active act = active_entries(x, validity, params.selector);
  std::vector<Vec2> pos = positions(x);
  std::vector<Vec2> grad;
  double obj = collision_eval(pos, boxes, act, A, params, &grad);
  rep.objective.push_back(obj);
  if (!std::isfinite(obj)) {
    rep.aborted = true;
    rep.warnings.push_back("non-finite collision objective");
    return x;
  }
  if (!any_overlap(pos, boxes, act, A)) return x;

  double step = std::min(params.initial_step, params.max_step);
  std::vector<Vec2> dir(pos.size()), trial(pos.size());
  for (int it = 0; it < params.iterations; ++it) {
    // Descent direction for x[a,t] = u[a] + r[a,t]: -(sum_t g[a,t] + g[a,t]).
    double max_abs = 0.0;
    for (int a = 0; a < A; ++a) {
      Vec2 total{};
      for (int t = 0; t < T; ++t)
        if (act.ok(a, t)) total = total + grad[static_cast<std::size_t>(a) * T + t];
      for (int t = 0; t < T; ++t) {
        const std::size_t i = static_cast<std::size_t>(a) * T + t;
        dir[i] = act.ok(a, t) && act.selected[a] ? (total + grad[i]) * -1.0 : Vec2{};
        max_abs = std::max({max_abs, std::abs(dir[i].x), std::abs(dir[i].y)});
      }
    }
    if (!std::isfinite(max_abs)) {
      rep.aborted = true;
      rep.warnings.push_back("non-finite collision gradient");
      return x;
    }
    if (max_abs == 0.0) break;
    bool accepted = false;
    double trial_obj = obj;
    for (int bt = 0; bt < params.max_backtracks; ++bt) {
      const double scale = step / max_abs;
      for (std::size_t i = 0; i < pos.size(); ++i) trial[i] = pos[i] + dir[i] * scale;
      trial_obj = collision_eval(trial, boxes, act, A, params, nullptr);
      if (std::isfinite(trial_obj) && trial_obj < obj) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    pos.swap(trial);
    obj = collision_eval(pos, boxes, act, A, params, &grad);
    rep.objective.push_back(obj);
    rep.iterations = it + 1;
    step = std::min(step * 2.0, params.max_step);
    if (!any_overlap(pos, boxes, act, A)) break;
  }
  SceneTensor out = x;
  for (int a = 0; a < A; ++a)
    for (int t = 0; t < T; ++t) {
      out.at(a, t, channel::kX) = pos[static_cast<std::size_t>(a) * T + t].x;
      out.at(a, t, channel::kY) = pos[static_cast<std::size_t>(a) * T + t].y;
    }
  return out;
}

namespace {

bool inside_any(const std::vector<Polygon>& polys, Vec2 p) {
  return std::any_of(polys.begin(), polys.end(),
                     [&](const Polygon& poly) { return winding_number(poly, p) != 0; });
}

Vec2 closest_on_polygons(const std::vector<Polygon>& polys, Vec2 p) {
  Vec2 best{};
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& poly : polys) {
    const Vec2 c = closest_point_on_polyline(poly.points, p);
    const double d = norm(c - p);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

// Trajectories eligible for onroad clipping: selected, valid somewhere and
// strictly more than `threshold` of their valid waypoints onroad.
std::vector<std::uint8_t> onroad_eligible(const SceneTensor& x, const ValidityMask& validity,
                                          const OnroadFieldParams& p) {
  std::vector<std::uint8_t> eligible(x.agents(), 0);
  for (int a = 0; a < x.agents(); ++a) {
    if (!p.selector.selects(a)) continue;
    int valid = 0, on = 0;
    for (int t = 0; t < x.steps(); ++t) {
      if (!valid_at(x, validity, a, t)) continue;
      ++valid;
      on += inside_any(p.polygons, {x.at(a, t, channel::kX), x.at(a, t, channel::kY)}) ? 1 : 0;
    }
    eligible[a] = valid > 0 && static_cast<double>(on) / valid > p.onroad_threshold ? 1 : 0;
  }
  return eligible;
}

}  // namespace

double onroad_objective(const SceneTensor& x, const ValidityMask& validity,
                        const OnroadFieldParams& params) {
  if (params.polygons.empty()) return 0.0;
  const auto eligible = onroad_eligible(x, validity, params);
  double total = 0.0;
  for (int a = 0; a < x.agents(); ++a) {
    if (!eligible[a]) continue;
    for (int t = 0; t < x.steps(); ++t) {
      if (!valid_at(x, validity, a, t)) continue;
      const Vec2 p{x.at(a, t, channel::kX), x.at(a, t, channel::kY)};
      if (inside_any(params.polygons, p)) continue;
      const Vec2 d = p - closest_on_polygons(params.polygons, p);
      total += dot(d, d);
    }
  }
  return total;
}

SceneTensor clip_onroad(const SceneTensor& x, const ValidityMask& validity,
                        const OnroadFieldParams& params, ClipReport* report) {
  ClipReport local;
  ClipReport& rep = report ? *report : local;
  rep = ClipReport();
  if (params.polygons.empty()) {
    rep.warnings.push_back("empty roadgraph; onroad clip is the identity");
    return x;
  }
  const auto eligible = onroad_eligible(x, validity, params);
  SceneTensor out = x;
  rep.objective.push_back(onroad_objective(out, validity, params));
  for (int it = 0; it < params.iterations; ++it) {
    bool moved = false;
    for (int a = 0; a < x.agents(); ++a) {
      if (!eligible[a]) continue;
      for (int t = 0; t < x.steps(); ++t) {
        if (!valid_at(x, validity, a, t)) continue;
        const Vec2 p{out.at(a, t, channel::kX), out.at(a, t, channel::kY)};
        if (inside_any(params.polygons, p)) continue;
        // grad of |p - c|^2 with the closest point c held fixed.
        const Vec2 c = closest_on_polygons(params.polygons, p);
        const Vec2 next = p - (p - c) * (2.0 * params.learning_rate);
        if (next == p) continue;
        out.at(a, t, channel::kX) = next.x;
        out.at(a, t, channel::kY) = next.y;
        moved = true;
      }
    }
    rep.iterations = it + 1;
    // Offroad-ness is judged on the eligibility computed from the input so
    // the clip stays a projection of that input.
    double obj = 0.0;
    for (int a = 0; a < x.agents(); ++a) {
      if (!eligible[a]) continue;
      for (int t = 0; t < x.steps(); ++t) {
        if (!valid_at(x, validity, a, t)) continue;
        const Vec2 p{out.at(a, t, channel::kX), out.at(a, t, channel::kY)};
        if (inside_any(params.polygons, p)) continue;
        const Vec2 d = p - closest_on_polygons(params.polygons, p);
        obj += dot(d, d);
      }
    }
    rep.objective.push_back(obj);
    if (!moved) break;
  }
  return out;
}

SceneTensor apply_clips(const SceneTensor& x, const std::vector<ClipOperator>& clips,
                        const ValidityMask& validity) {
  SceneTensor out = x;
  for (const auto& c : clips) out = c.apply(out, validity);
  return out;
}

SceneTensor constrained_denoise_step(const SceneTensor& z, const SceneTensor& x_hat,
                                     const NoiseVector& s, const NoiseVector& t,
                                     const std::vector<ClipOperator>& clips,
                                     const ValidityMask& validity, Rng& rng) {
  if (clips.empty()) return denoise_step(z, x_hat, s, t, rng);
  return denoise_step(z, apply_clips(x_hat, clips, validity), s, t, rng);
}

SceneTensor post_diffusion_clip(const SceneTensor& x, const std::vector<ClipOperator>& clips,
                                const ValidityMask& validity) {
  return apply_clips(x, clips, validity);
}

std::vector<Polygon> normalized_polygons(const RoadGraph& world, const FeatureNormalizer& normalizer) {
  std::vector<Polygon> out;
  for (const auto& poly : world.boundaries) {
    Polygon p;
    for (const Vec2& v : poly.points)
      p.points.push_back({normalizer.normalize_position(v.x), normalizer.normalize_position(v.y)});
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace trafficdiff
