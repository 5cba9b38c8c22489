// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

namespace trafficdiff {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
double norm(Vec2 v);

using Polyline = std::vector<Vec2>;

// Closed ring: the first point is repeated as the last one.
struct Polygon {
  std::vector<Vec2> points;

  bool closed() const { return points.size() >= 4 && points.front() == points.back(); }
};

// Appends the first point if missing.
Polygon close_ring(std::vector<Vec2> points);

// Signed area (positive for counter-clockwise rings).
double signed_area(const Polygon& polygon);

// Winding number of the ring around p; nonzero means inside.
int winding_number(const Polygon& polygon, Vec2 p);

// Even-odd ray casting; independent point-in-polygon reference.
bool point_in_polygon_raycast(const Polygon& polygon, Vec2 p);

Vec2 closest_point_on_segment(Vec2 a, Vec2 b, Vec2 p);
Vec2 closest_point_on_polyline(const std::vector<Vec2>& line, Vec2 p);

struct OrientedBox {
  Vec2 center;
  double heading = 0.0;
  double length = 0.0;  // along heading
  double width = 0.0;

  // Counter-clockwise: front-left, rear-left, rear-right, front-right.
  std::array<Vec2, 4> corners() const;
};

// Separating-axis test; touching boxes (zero-area contact) do not overlap.
bool boxes_overlap(const OrientedBox& a, const OrientedBox& b);

// Euclidean gap between the boxes when disjoint; minus the minimum
// separating-axis penetration when they overlap.
double signed_box_distance(const OrientedBox& a, const OrientedBox& b);

struct RoadGraph {
  std::vector<Polyline> lanes;       // centerlines
  std::vector<double> lane_speeds;   // nominal m/s per lane
  std::vector<Polygon> boundaries;   // drivable area

  bool empty() const { return boundaries.empty() && lanes.empty(); }
  // Inside any boundary polygon by winding number.
  bool onroad(Vec2 p) const;
  // Distance to the nearest boundary edge, negative when onroad.
  double signed_distance_to_edge(Vec2 p) const;
  // Closest point on any boundary edge.
  Vec2 closest_boundary_point(Vec2 p) const;
};

}  // namespace trafficdiff
