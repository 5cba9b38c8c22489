// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "trafficdiff/geometry.hpp"
#include "trafficdiff/rollout.hpp"
#include "trafficdiff/scene.hpp"
#include "trafficdiff/world.hpp"

namespace trafficdiff {

using Json = nlohmann::json;

// A logged (or synthetic) scene with its roadgraph. `mixture` is present for
// synthetic scenes and lets the analytic oracle be rebuilt.
struct Scenario {
  std::string name;
  WorldScene log;
  RoadGraph road;
  std::optional<BehaviorMixture> mixture;
};

Json scene_to_json(const WorldScene& scene);
WorldScene scene_from_json(const Json& j);

Json road_to_json(const RoadGraph& road);
RoadGraph road_from_json(const Json& j);

Json mixture_to_json(const BehaviorMixture& m);
BehaviorMixture mixture_from_json(const Json& j);

Json scenario_to_json(const Scenario& s);
Scenario scenario_from_json(const Json& j);

Json read_json_file(const std::string& path);
// Writes `j` with two-space indentation and a trailing newline.
void write_json_file(const std::string& path, const Json& j);

}  // namespace trafficdiff
