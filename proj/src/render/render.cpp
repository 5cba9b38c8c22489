// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

namespace trafficdiff {

namespace {

struct Rgb {
  double r, g, b;
};

constexpr Rgb kEnvStart{46, 160, 67}, kEnvEnd{31, 94, 196};
constexpr Rgb kAvStart{245, 130, 20}, kAvEnd{240, 215, 30};
constexpr Rgb kInjStart{215, 40, 40}, kInjEnd{128, 50, 170};

std::string hex(Rgb a, Rgb b, double u) {
  char buf[8];
  auto mix = [u](double x, double y) { return static_cast<int>(std::lround(x + (y - x) * u)); };
  std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", mix(a.r, b.r), mix(a.g, b.g), mix(a.b, b.b));
  return buf;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string render_scene_svg(const WorldScene& scene, const RoadGraph& road, const RenderSpec& spec) {
  if (spec.stride < 1) throw std::invalid_argument("render stride must be >= 1");
  if (!(spec.pixels_per_meter > 0.0)) throw std::invalid_argument("pixels_per_meter must be > 0");
  const int A = scene.shape.agents;
  const int T = scene.shape.steps();

  Viewport vp;
  if (spec.viewport) {
    vp = *spec.viewport;
  } else {
    const double inf = std::numeric_limits<double>::infinity();
    vp = {inf, inf, -inf, -inf};
    auto grow = [&](Vec2 p) {
      vp.min_x = std::min(vp.min_x, p.x);
      vp.min_y = std::min(vp.min_y, p.y);
      vp.max_x = std::max(vp.max_x, p.x);
      vp.max_y = std::max(vp.max_y, p.y);
    };
    for (const auto& b : road.boundaries)
      for (const Vec2& p : b.points) grow(p);
    for (const auto& l : road.lanes)
      for (const Vec2& p : l) grow(p);
    for (int a = 0; a < A; ++a)
      for (int t = 0; t < T; ++t)
        if (scene.validity(a, t)) grow({scene.at(a, t).x, scene.at(a, t).y});
    if (!std::isfinite(vp.min_x)) vp = {-10.0, -10.0, 10.0, 10.0};
    vp.min_x -= spec.margin_m;
    vp.min_y -= spec.margin_m;
    vp.max_x += spec.margin_m;
    vp.max_y += spec.margin_m;
  }
  const double k = spec.pixels_per_meter;
  const double width = (vp.max_x - vp.min_x) * k;
  const double height = (vp.max_y - vp.min_y) * k;
  // World y points up; SVG y points down.
  auto px = [&](Vec2 p) { return fmt((p.x - vp.min_x) * k) + "," + fmt((vp.max_y - p.y) * k); };

  std::string out;
  out += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
         fmt(height) + "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(height) + "\">\n";
  out += "<rect class=\"background\" x=\"0\" y=\"0\" width=\"" + fmt(width) + "\" height=\"" +
         fmt(height) + "\" fill=\"#ffffff\"/>\n";
  out += "<g class=\"road\">\n";
  for (const auto& b : road.boundaries) {
    out += "<polygon class=\"boundary\" fill=\"#e4e4e4\" stroke=\"#707070\" stroke-width=\"1\" points=\"";
    for (std::size_t i = 0; i + 1 < b.points.size(); ++i) out += (i ? " " : "") + px(b.points[i]);
    out += "\"/>\n";
  }
  for (const auto& l : road.lanes) {
    out += "<polyline class=\"lane\" fill=\"none\" stroke=\"#b0b0b0\" stroke-dasharray=\"6,6\" points=\"";
    for (std::size_t i = 0; i < l.size(); ++i) out += (i ? " " : "") + px(l[i]);
    out += "\"/>\n";
  }
  out += "</g>\n<g class=\"agents\">\n";
  for (int a = 0; a < A; ++a) {
    const bool injected = std::find(spec.injected.begin(), spec.injected.end(), a) != spec.injected.end();
    for (int t = 0; t < T; t += spec.stride) {
      if (!scene.validity(a, t)) continue;
      const AgentFeatures& f = scene.at(a, t);
      const bool av = spec.av_agent >= 0 ? a == spec.av_agent : f.type == AgentType::kAV;
      const double u = T > 1 ? static_cast<double>(t) / (T - 1) : 0.0;
      const std::string color = injected ? hex(kInjStart, kInjEnd, u)
                                : av     ? hex(kAvStart, kAvEnd, u)
                                         : hex(kEnvStart, kEnvEnd, u);
      const OrientedBox box{{f.x, f.y}, f.heading, f.length, f.width};
      const auto c = box.corners();
      out += "<polygon class=\"box\" data-agent=\"" + std::to_string(a) + "\" data-step=\"" +
             std::to_string(t) + "\" fill=\"" + color + "\" fill-opacity=\"0.6\" stroke=\"" + color +
             "\" points=\"" + px(c[0]) + " " + px(c[1]) + " " + px(c[2]) + " " + px(c[3]) + "\"/>\n";
    }
  }
  out += "</g>\n</svg>\n";
  return out;
}

}  // namespace trafficdiff
