// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/io.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace trafficdiff {

namespace {

Json points_to_json(const std::vector<Vec2>& pts) {
  Json out = Json::array();
  for (const Vec2& p : pts) out.push_back({p.x, p.y});
  return out;
}

std::vector<Vec2> points_from_json(const Json& j) {
  std::vector<Vec2> pts;
  for (const auto& p : j) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  return pts;
}

}  // namespace

Json scene_to_json(const WorldScene& scene) {
  const int H = scene.shape.history;
  Json agents = Json::array();
  for (int a = 0; a < scene.shape.agents; ++a) {
    // Agent-level size and type come from the first valid step; steps that
    // differ carry their own size fields.
    int ref = 0;
    while (ref < scene.shape.steps() && !scene.validity(a, ref)) ++ref;
    const AgentFeatures& r = scene.at(a, ref < scene.shape.steps() ? ref : 0);
    Json states = Json::array();
    for (int t = 0; t < scene.shape.steps(); ++t) {
      const AgentFeatures& f = scene.at(a, t);
      Json st = {{"t", t - H}, {"x", f.x}, {"y", f.y}, {"z", f.z}, {"heading", f.heading},
                 {"valid", scene.validity(a, t)}};
      if (f.length != r.length) st["length"] = f.length;
      if (f.width != r.width) st["width"] = f.width;
      if (f.height != r.height) st["height"] = f.height;
      states.push_back(std::move(st));
    }
    agents.push_back({{"id", a}, {"type", to_string(r.type)}, {"length", r.length}, {"width", r.width},
                      {"height", r.height}, {"states", states}});
  }
  return {{"history_len", H}, {"future_len", scene.shape.future}, {"agents_capacity", scene.shape.agents},
          {"agents", agents}};
}

WorldScene scene_from_json(const Json& j) {
  const int H = j.at("history_len").get<int>();
  const int F = j.at("future_len").get<int>();
  const Json& agents = j.at("agents");
  const int A = j.value("agents_capacity", static_cast<int>(agents.size()));
  if (A < 0 || H < 0 || F < 0) throw std::invalid_argument("negative scene dimensions");
  if (static_cast<int>(agents.size()) > A) throw std::invalid_argument("more agents than agents_capacity");
  WorldScene scene(A, H, F);
  for (std::size_t i = 0; i < agents.size(); ++i) {
    const Json& ag = agents[i];
    const int a = ag.value("id", static_cast<int>(i));
    if (a < 0 || a >= A) throw std::invalid_argument("agent id " + std::to_string(a) + " out of range");
    const AgentType type = agent_type_from_string(ag.at("type").get<std::string>());
    const double length = ag.at("length").get<double>();
    const double width = ag.at("width").get<double>();
    const double height = ag.at("height").get<double>();
    for (int t = 0; t < H + F; ++t) {
      AgentFeatures& f = scene.at(a, t);
      f.type = type;
      f.length = length;
      f.width = width;
      f.height = height;
    }
    for (const auto& st : ag.at("states")) {
      const int t = st.at("t").get<int>() + H;
      if (t < 0 || t >= H + F)
        throw std::invalid_argument("agent " + std::to_string(a) + " has a state outside [-H, F)");
      AgentFeatures& f = scene.at(a, t);
      f.x = st.at("x").get<double>();
      f.y = st.at("y").get<double>();
      f.z = st.value("z", 0.0);
      f.heading = st.at("heading").get<double>();
      f.length = st.value("length", length);
      f.width = st.value("width", width);
      f.height = st.value("height", height);
      scene.validity.set(a, t, st.value("valid", true));
    }
  }
  return scene;
}

Json road_to_json(const RoadGraph& road) {
  Json out = Json::array();
  int id = 0;
  for (std::size_t i = 0; i < road.lanes.size(); ++i) {
    Json lane = {{"polyline_id", id++}, {"kind", "lane"}, {"points", points_to_json(road.lanes[i])}};
    if (i < road.lane_speeds.size()) lane["speed"] = road.lane_speeds[i];
    out.push_back(std::move(lane));
  }
  for (const auto& b : road.boundaries)
    out.push_back({{"polyline_id", id++}, {"kind", "boundary"}, {"points", points_to_json(b.points)}});
  return out;
}

RoadGraph road_from_json(const Json& j) {
  RoadGraph road;
  for (const auto& p : j) {
    const std::string kind = p.at("kind").get<std::string>();
    if (kind == "lane") {
      road.lanes.push_back(points_from_json(p.at("points")));
      road.lane_speeds.push_back(p.value("speed", 10.0));
    } else if (kind == "boundary") {
      Polygon poly{points_from_json(p.at("points"))};
      if (!poly.closed()) throw std::invalid_argument("road boundary polygons must be closed");
      road.boundaries.push_back(std::move(poly));
    } else {
      throw std::invalid_argument("unknown roadgraph kind '" + kind + "'");
    }
  }
  return road;
}

Json mixture_to_json(const BehaviorMixture& m) {
  Json agents = Json::array();
  for (const auto& a : m.agents) {
    Json behaviors = Json::array();
    for (const auto& b : a.behaviors)
      behaviors.push_back({{"behavior", to_string(b.behavior)},
                           {"weight", b.weight},
                           {"decel", b.decel},
                           {"lane_offset", b.lane_offset},
                           {"duration", b.duration}});
    agents.push_back({{"type", to_string(a.type)},
                      {"lane", a.lane},
                      {"s_ref", a.s_ref},
                      {"speed", a.speed},
                      {"length", a.length},
                      {"width", a.width},
                      {"height", a.height},
                      {"behaviors", behaviors}});
  }
  const WorldParams& w = m.world;
  const NoiseSpec& n = m.noise;
  return {{"template", to_string(m.tmpl)},
          {"params",
           {{"lanes", w.lanes},
            {"lane_width", w.lane_width},
            {"length", w.length},
            {"start_x", w.start_x},
            {"curve_radius", w.curve_radius},
            {"curve_angle", w.curve_angle},
            {"lane_speed", w.lane_speed},
            {"speed_jitter", w.speed_jitter}}},
          {"capacity", m.capacity},
          {"history", m.history},
          {"future", m.future},
          {"noise",
           {{"position_m", n.position_m},
            {"z_m", n.z_m},
            {"heading", n.heading},
            {"size_m", n.size_m},
            {"type_norm", n.type_norm},
            {"invalid_var", n.invalid_var}}},
          {"joint_weights", m.joint_weights},
          {"agents", agents}};
}

BehaviorMixture mixture_from_json(const Json& j) {
  BehaviorMixture m;
  m.tmpl = world_template_from_string(j.at("template").get<std::string>());
  const Json& p = j.at("params");
  m.world.lanes = p.at("lanes").get<int>();
  m.world.lane_width = p.at("lane_width").get<double>();
  m.world.length = p.at("length").get<double>();
  m.world.start_x = p.at("start_x").get<double>();
  m.world.curve_radius = p.at("curve_radius").get<double>();
  m.world.curve_angle = p.at("curve_angle").get<double>();
  m.world.lane_speed = p.at("lane_speed").get<double>();
  m.world.speed_jitter = p.at("speed_jitter").get<double>();
  m.capacity = j.at("capacity").get<int>();
  m.history = j.at("history").get<int>();
  m.future = j.at("future").get<int>();
  const Json& n = j.at("noise");
  m.noise.position_m = n.at("position_m").get<double>();
  m.noise.z_m = n.at("z_m").get<double>();
  m.noise.heading = n.at("heading").get<double>();
  m.noise.size_m = n.at("size_m").get<double>();
  m.noise.type_norm = n.at("type_norm").get<double>();
  m.noise.invalid_var = n.at("invalid_var").get<double>();
  m.joint_weights = j.at("joint_weights").get<std::vector<double>>();
  for (const auto& a : j.at("agents")) {
    AgentSpec s;
    s.type = agent_type_from_string(a.at("type").get<std::string>());
    s.lane = a.at("lane").get<int>();
    s.s_ref = a.at("s_ref").get<double>();
    s.speed = a.at("speed").get<double>();
    s.length = a.at("length").get<double>();
    s.width = a.at("width").get<double>();
    s.height = a.at("height").get<double>();
    for (const auto& b : a.at("behaviors")) {
      BehaviorOption o;
      o.behavior = behavior_from_string(b.at("behavior").get<std::string>());
      o.weight = b.at("weight").get<double>();
      o.decel = b.at("decel").get<double>();
      o.lane_offset = b.at("lane_offset").get<int>();
      o.duration = b.at("duration").get<double>();
      s.behaviors.push_back(o);
    }
    m.agents.push_back(std::move(s));
  }
  return m;
}

Json scenario_to_json(const Scenario& s) {
  Json j = scene_to_json(s.log);
  j["format"] = "trafficdiff-scenario";
  j["version"] = 1;
  j["name"] = s.name;
  j["roadgraph"] = road_to_json(s.road);
  if (s.mixture) j["world"] = mixture_to_json(*s.mixture);
  return j;
}

Scenario scenario_from_json(const Json& j) {
  if (j.value("version", 1) != 1) throw std::invalid_argument("unsupported scenario version");
  Scenario s;
  s.name = j.value("name", "");
  s.log = scene_from_json(j);
  s.road = road_from_json(j.at("roadgraph"));
  if (j.contains("world")) s.mixture = mixture_from_json(j.at("world"));
  return s;
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw std::runtime_error("invalid JSON in " + path + ": " + e.what());
  }
}

void write_json_file(const std::string& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for " + path);
}

}  // namespace trafficdiff
