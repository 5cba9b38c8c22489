// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace trafficdiff {

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

Polygon close_ring(std::vector<Vec2> points) {
  if (points.size() < 3) throw std::invalid_argument("polygon needs at least 3 vertices");
  if (!(points.front() == points.back())) points.push_back(points.front());
  return Polygon{std::move(points)};
}

double signed_area(const Polygon& polygon) {
  double a = 0.0;
  const auto& p = polygon.points;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) a += cross(p[i], p[i + 1]);
  return 0.5 * a;
}

int winding_number(const Polygon& polygon, Vec2 p) {
  int wn = 0;
  const auto& v = polygon.points;
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    const Vec2 a = v[i];
    const Vec2 b = v[i + 1];
    const double side = cross(b - a, p - a);
    if (a.y <= p.y) {
      if (b.y > p.y && side > 0) ++wn;
    } else if (b.y <= p.y && side < 0) {
      --wn;
    }
  }
  return wn;
}

bool point_in_polygon_raycast(const Polygon& polygon, Vec2 p) {
  bool inside = false;
  const auto& v = polygon.points;
  for (std::size_t i = 0, j = v.size() - 2; i + 1 < v.size(); j = i++) {
    if ((v[i].y > p.y) != (v[j].y > p.y)) {
      const double x_cross = (v[j].x - v[i].x) * (p.y - v[i].y) / (v[j].y - v[i].y) + v[i].x;
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

Vec2 closest_point_on_segment(Vec2 a, Vec2 b, Vec2 p) {
  const Vec2 ab = b - a;
  const double len2 = dot(ab, ab);
  if (len2 == 0.0) return a;
  const double u = std::clamp(dot(p - a, ab) / len2, 0.0, 1.0);
  return a + ab * u;
}

Vec2 closest_point_on_polyline(const std::vector<Vec2>& line, Vec2 p) {
  if (line.empty()) throw std::invalid_argument("empty polyline");
  if (line.size() == 1) return line[0];
  Vec2 best = line[0];
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const Vec2 c = closest_point_on_segment(line[i], line[i + 1], p);
    const double d = norm(c - p);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::array<Vec2, 4> OrientedBox::corners() const {
  const Vec2 f{std::cos(heading) * 0.5 * length, std::sin(heading) * 0.5 * length};
  const Vec2 l{-std::sin(heading) * 0.5 * width, std::cos(heading) * 0.5 * width};
  return {center + f + l, center - f + l, center - f - l, center + f - l};
}

namespace {

// Minimum overlap of the projections over the four box axes; <= 0 if any
// axis separates.
double min_axis_overlap(const std::array<Vec2, 4>& ca, const std::array<Vec2, 4>& cb,
                        double ha, double hb) {
  const Vec2 axes[4] = {{std::cos(ha), std::sin(ha)},
                        {-std::sin(ha), std::cos(ha)},
                        {std::cos(hb), std::sin(hb)},
                        {-std::sin(hb), std::cos(hb)}};
  double best = std::numeric_limits<double>::infinity();
  for (const Vec2& axis : axes) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin;
    double bmin = amin, bmax = -amin;
    for (const Vec2& c : ca) {
      const double p = dot(c, axis);
      amin = std::min(amin, p);
      amax = std::max(amax, p);
    }
    for (const Vec2& c : cb) {
      const double p = dot(c, axis);
      bmin = std::min(bmin, p);
      bmax = std::max(bmax, p);
    }
    best = std::min(best, std::min(amax, bmax) - std::max(amin, bmin));
  }
  return best;
}

}  // namespace

bool boxes_overlap(const OrientedBox& a, const OrientedBox& b) {
  return min_axis_overlap(a.corners(), b.corners(), a.heading, b.heading) > 0.0;
}

double signed_box_distance(const OrientedBox& a, const OrientedBox& b) {
  const auto ca = a.corners();
  const auto cb = b.corners();
  const double overlap = min_axis_overlap(ca, cb, a.heading, b.heading);
  if (overlap > 0.0) return -overlap;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      best = std::min(best, norm(closest_point_on_segment(cb[j], cb[(j + 1) % 4], ca[i]) - ca[i]));
      best = std::min(best, norm(closest_point_on_segment(ca[j], ca[(j + 1) % 4], cb[i]) - cb[i]));
    }
  }
  return best;
}

bool RoadGraph::onroad(Vec2 p) const {
  return std::any_of(boundaries.begin(), boundaries.end(),
                     [&](const Polygon& poly) { return winding_number(poly, p) != 0; });
}

Vec2 RoadGraph::closest_boundary_point(Vec2 p) const {
  if (boundaries.empty()) throw std::invalid_argument("roadgraph has no boundary polygons");
  Vec2 best{};
  double best_d = std::numeric_limits<double>::infinity();
  for (const Polygon& poly : boundaries) {
    const Vec2 c = closest_point_on_polyline(poly.points, p);
    const double d = norm(c - p);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

double RoadGraph::signed_distance_to_edge(Vec2 p) const {
  const double d = norm(closest_boundary_point(p) - p);
  return onroad(p) ? -d : d;
}

}  // namespace trafficdiff
