// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trafficdiff/geometry.hpp"
#include "trafficdiff/scene.hpp"

namespace trafficdiff {

struct Viewport {
  double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;
};

struct RenderSpec {
  // Agents drawn with the external-input palette (red to purple).
  std::vector<int> injected;
  // Agent drawn with the AV palette (orange to yellow); -1 picks every
  // agent whose type is AV.
  int av_agent = -1;
  int stride = 1;            // draw every stride-th step
  double pixels_per_meter = 4.0;
  double margin_m = 5.0;
  std::optional<Viewport> viewport;  // default: fit road and agents
};

// Self-contained SVG. One <polygon class="box"> per drawn (agent, step);
// colors run along a per-role temporal gradient.
std::string render_scene_svg(const WorldScene& scene, const RoadGraph& road, const RenderSpec& spec = {});

}  // namespace trafficdiff
