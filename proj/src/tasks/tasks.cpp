// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/tasks.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

namespace trafficdiff {

ConstraintFeature constraint_feature_from_string(const std::string& name) {
  if (name == "X") return ConstraintFeature::kX;
  if (name == "Y") return ConstraintFeature::kY;
  if (name == "Z") return ConstraintFeature::kZ;
  if (name == "LENGTH") return ConstraintFeature::kLength;
  if (name == "WIDTH") return ConstraintFeature::kWidth;
  if (name == "HEIGHT") return ConstraintFeature::kHeight;
  throw std::invalid_argument("unknown constraint feature: " + name);
}

const char* to_string(ConstraintFeature feature) {
  switch (feature) {
    case ConstraintFeature::kX: return "X";
    case ConstraintFeature::kY: return "Y";
    case ConstraintFeature::kZ: return "Z";
    case ConstraintFeature::kLength: return "LENGTH";
    case ConstraintFeature::kWidth: return "WIDTH";
    case ConstraintFeature::kHeight: return "HEIGHT";
  }
  return "LENGTH";
}

namespace {

AgentType config_agent_type(const TextField& f) {
  if (f.value == "AV") return AgentType::kAV;
  if (f.value == "CAR" || f.value == "VEHICLE") return AgentType::kCar;
  if (f.value == "PEDESTRIAN") return AgentType::kPedestrian;
  if (f.value == "CYCLIST") return AgentType::kCyclist;
  throw ConfigError(f.line, f.column, "unknown agent type '" + f.value + "'");
}

const char* config_type_name(AgentType t) {
  switch (t) {
    case AgentType::kAV: return "AV";
    case AgentType::kCar: return "CAR";
    case AgentType::kPedestrian: return "PEDESTRIAN";
    case AgentType::kCyclist: return "CYCLIST";
  }
  return "CAR";
}

[[noreturn]] void unknown_key(const TextField& f, const char* where) {
  throw ConfigError(f.line, f.column, "unknown key '" + f.key + "' in " + where);
}

void expect_scalar(const TextField& f) {
  if (f.is_block()) throw ConfigError(f.line, f.column, "'" + f.key + "' expects a value");
}

ControlPoint parse_control_point(const TextField& block) {
  ControlPoint cp;
  cp.line = block.line;
  cp.column = block.column;
  bool has_t = false, has_x = false, has_y = false;
  for (const auto& f : block.block->fields) {
    expect_scalar(f);
    if (f.key == "time_step") {
      cp.time_step = f.as_int();
      has_t = true;
    } else if (f.key == "x") {
      cp.x = f.as_number();
      has_x = true;
    } else if (f.key == "y") {
      cp.y = f.as_number();
      has_y = true;
    } else if (f.key == "heading") {
      cp.heading = f.as_number();
    } else {
      unknown_key(f, "control_point");
    }
  }
  if (!has_t || !has_x || !has_y)
    throw ConfigError(block.line, block.column, "control_point needs time_step, x and y");
  return cp;
}

AgentDirective parse_agent(const TextField& block) {
  AgentDirective agent;
  agent.line = block.line;
  agent.column = block.column;
  for (const auto& f : block.block->fields) {
    if (f.key == "type") {
      expect_scalar(f);
      agent.type = config_agent_type(f);
    } else if (f.key == "slot") {
      expect_scalar(f);
      agent.slot = f.as_int();
      if (*agent.slot < 0) throw ConfigError(f.line, f.column, "slot must be >= 0");
    } else if (f.key == "control_point") {
      if (!f.is_block()) throw ConfigError(f.line, f.column, "control_point expects a block");
      agent.points.push_back(parse_control_point(f));
    } else {
      unknown_key(f, "agent");
    }
  }
  return agent;
}

HardConstraint parse_constraint(const TextField& block) {
  HardConstraint hc;
  bool has_kind = false, has_feature = false, has_min = false, has_max = false;
  for (const auto& f : block.block->fields) {
    expect_scalar(f);
    if (f.key == "kind") {
      has_kind = true;
      if (f.value == "NON_COLLISION") hc.kind = ClipKind::kNonCollision;
      else if (f.value == "RANGE") hc.kind = ClipKind::kRange;
      else if (f.value == "ONROAD") hc.kind = ClipKind::kOnroad;
      else throw ConfigError(f.line, f.column, "unknown constraint kind '" + f.value + "'");
    } else if (f.key == "feature") {
      has_feature = true;
      try {
        hc.feature = constraint_feature_from_string(f.value);
      } catch (const std::invalid_argument&) {
        throw ConfigError(f.line, f.column, "unknown feature '" + f.value + "'");
      }
    } else if (f.key == "min") {
      hc.min = f.as_number();
      has_min = true;
    } else if (f.key == "max") {
      hc.max = f.as_number();
      has_max = true;
    } else if (f.key == "agent") {
      hc.agents.push_back(f.as_int());
    } else if (f.key == "epsilon") {
      hc.epsilon = f.as_number();
      if (!(*hc.epsilon > 0.0)) throw ConfigError(f.line, f.column, "epsilon must be > 0");
    } else if (f.key == "iterations") {
      hc.iterations = f.as_int();
      if (*hc.iterations < 0) throw ConfigError(f.line, f.column, "iterations must be >= 0");
    } else {
      unknown_key(f, "hard_constraint");
    }
  }
  if (!has_kind) throw ConfigError(block.line, block.column, "hard_constraint needs a kind");
  if (hc.kind == ClipKind::kRange) {
    if (!has_feature || !has_min || !has_max)
      throw ConfigError(block.line, block.column, "RANGE needs feature, min and max");
    if (hc.min > hc.max) throw ConfigError(block.line, block.column, "RANGE needs min <= max");
  }
  return hc;
}

std::string number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

ConstraintConfig parse_constraint_config(const std::string& text) {
  const TextNode root = parse_text_config(text);
  ConstraintConfig config;
  for (const auto& f : root.fields) {
    if (!f.is_block()) throw ConfigError(f.line, f.column, "'" + f.key + "' expects a block");
    if (f.key == "agent") config.agents.push_back(parse_agent(f));
    else if (f.key == "hard_constraint") config.constraints.push_back(parse_constraint(f));
    else unknown_key(f, "config");
  }
  return config;
}

std::string serialize_constraint_config(const ConstraintConfig& config) {
  std::ostringstream out;
  for (const auto& agent : config.agents) {
    out << "agent {\n  type: " << config_type_name(agent.type) << "\n";
    if (agent.slot) out << "  slot: " << *agent.slot << "\n";
    for (const auto& cp : agent.points) {
      out << "  control_point { time_step: " << cp.time_step << " x: " << number(cp.x)
          << " y: " << number(cp.y);
      if (cp.heading) out << " heading: " << number(*cp.heading);
      out << " }\n";
    }
    out << "}\n";
  }
  for (const auto& hc : config.constraints) {
    out << "hard_constraint { kind: ";
    switch (hc.kind) {
      case ClipKind::kNonCollision: out << "NON_COLLISION"; break;
      case ClipKind::kOnroad: out << "ONROAD"; break;
      case ClipKind::kRange:
        out << "RANGE feature: " << to_string(hc.feature) << " min: " << number(hc.min)
            << " max: " << number(hc.max);
        break;
    }
    for (int a : hc.agents) out << " agent: " << a;
    if (hc.epsilon) out << " epsilon: " << number(*hc.epsilon);
    if (hc.iterations) out << " iterations: " << *hc.iterations;
    out << " }\n";
  }
  return out.str();
}

namespace {

struct ChannelMap {
  int channel;
  double (FeatureNormalizer::*normalize)(double) const;
  double (FeatureNormalizer::*denormalize)(double) const;
};

ChannelMap channel_map(ConstraintFeature f) {
  switch (f) {
    case ConstraintFeature::kX:
      return {channel::kX, &FeatureNormalizer::normalize_position, &FeatureNormalizer::denormalize_position};
    case ConstraintFeature::kY:
      return {channel::kY, &FeatureNormalizer::normalize_position, &FeatureNormalizer::denormalize_position};
    case ConstraintFeature::kZ:
      return {channel::kZ, &FeatureNormalizer::normalize_position, &FeatureNormalizer::denormalize_position};
    case ConstraintFeature::kLength:
      return {channel::kLength, &FeatureNormalizer::normalize_length, &FeatureNormalizer::denormalize_length};
    case ConstraintFeature::kWidth:
      return {channel::kWidth, &FeatureNormalizer::normalize_width, &FeatureNormalizer::denormalize_width};
    case ConstraintFeature::kHeight:
      return {channel::kHeight, &FeatureNormalizer::normalize_height, &FeatureNormalizer::denormalize_height};
  }
  return {channel::kLength, &FeatureNormalizer::normalize_length, &FeatureNormalizer::denormalize_length};
}

// Normalized bounds nudged inward so decoded values land inside the
// world-unit range despite rounding.
std::pair<double, double> normalized_bounds(const HardConstraint& hc, const FeatureNormalizer& n) {
  const ChannelMap m = channel_map(hc.feature);
  double lo = (n.*m.normalize)(hc.min);
  double hi = (n.*m.normalize)(hc.max);
  const double inf = std::numeric_limits<double>::infinity();
  while ((n.*m.denormalize)(lo) < hc.min) lo = std::nextafter(lo, inf);
  while ((n.*m.denormalize)(hi) > hc.max) hi = std::nextafter(hi, -inf);
  if (lo > hi) lo = hi = (n.*m.normalize)(0.5 * (hc.min + hc.max));
  return {lo, hi};
}

}  // namespace

CompiledConstraints compile_constraints(const ConstraintConfig& config, const SceneShape& shape,
                                        const ValidityMask& validity, const RoadGraph* world,
                                        const FeatureNormalizer& normalizer) {
  if (validity.agents() != shape.agents || validity.steps() != shape.steps())
    throw std::invalid_argument("validity does not match the scene shape");
  CompiledConstraints out;
  out.validity = validity;
  out.inpaint = InpaintingSpec::none(shape);
  out.inpaint.mask = Mask::dense(shape);
  const int H = shape.history;
  const int F = shape.future;

  // Explicit slots are claimed first; the rest take the lowest invalid slot.
  std::vector<std::uint8_t> taken(shape.agents, 0);
  for (const auto& agent : config.agents)
    if (agent.slot) {
      if (*agent.slot >= shape.agents)
        throw ConfigError(agent.line, agent.column, "slot " + std::to_string(*agent.slot) + " out of range");
      taken[*agent.slot] = 1;
    }
  std::set<std::pair<int, int>> seen;
  for (const auto& agent : config.agents) {
    int slot = -1;
    if (agent.slot) {
      slot = *agent.slot;
    } else {
      for (int a = 0; a < shape.agents; ++a)
        if (!taken[a] && !out.validity.agent_any(a)) {
          slot = a;
          break;
        }
      if (slot < 0) throw ConfigError(agent.line, agent.column, "no free agent slot");
      taken[slot] = 1;
      out.validity.set_agent(slot, true);
    }
    out.slots.push_back(slot);
    for (const auto& cp : agent.points) {
      if (cp.time_step < -H || cp.time_step >= F)
        throw ConfigError(cp.line, cp.column,
                          "time_step " + std::to_string(cp.time_step) + " outside [" +
                              std::to_string(-H) + ", " + std::to_string(F) + ")");
      if (!seen.insert({slot, cp.time_step}).second)
        throw ConfigError(cp.line, cp.column, "duplicate control point for slot " +
                                                  std::to_string(slot) + " at time_step " +
                                                  std::to_string(cp.time_step));
      const int step = cp.time_step + H;
      auto set = [&](int ch, double v) {
        out.inpaint.mask.set(slot, step, ch, true);
        out.inpaint.context.at(slot, step, ch) = v;
      };
      set(channel::kX, normalizer.normalize_position(cp.x));
      set(channel::kY, normalizer.normalize_position(cp.y));
      if (cp.heading) {
        const auto [c, s] = encode_heading(*cp.heading);
        set(channel::kCos, c);
        set(channel::kSin, s);
      }
      for (int k = 0; k < kAgentTypeCount; ++k)
        set(channel::kType + k,
            normalizer.normalize_type_slot(static_cast<int>(agent.type) == k ? 1.0 : 0.0));
    }
  }

  for (const auto& hc : config.constraints) {
    switch (hc.kind) {
      case ClipKind::kRange: {
        RangeClip r;
        r.channel = channel_map(hc.feature).channel;
        std::tie(r.min, r.max) = normalized_bounds(hc, normalizer);
        r.selector.agents = hc.agents;
        out.clips.emplace_back(r);
        break;
      }
      case ClipKind::kNonCollision: {
        CollisionFieldParams p;
        if (hc.epsilon) p.epsilon = *hc.epsilon;
        if (hc.iterations) p.iterations = *hc.iterations;
        p.selector.agents = hc.agents;
        out.clips.emplace_back(p);
        break;
      }
      case ClipKind::kOnroad: {
        OnroadFieldParams p;
        if (world) p.polygons = normalized_polygons(*world, normalizer);
        if (hc.iterations) p.iterations = *hc.iterations;
        p.selector.agents = hc.agents;
        out.clips.emplace_back(p);
        break;
      }
    }
  }
  return out;
}

CompiledConstraints compile_constraint_config(const std::string& text, const SceneShape& shape,
                                              const ValidityMask& validity, const RoadGraph* world) {
  return compile_constraints(parse_constraint_config(text), shape, validity, world);
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "scenegen") return TaskKind::kScenegen;
  if (name == "bp") return TaskKind::kBp;
  if (name == "conditional_scenegen") return TaskKind::kConditionalScenegen;
  if (name == "conditional_bp") return TaskKind::kConditionalBp;
  if (name == "log_perturb") return TaskKind::kLogPerturb;
  throw std::invalid_argument("unknown task kind: " + name);
}

const char* to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kScenegen: return "scenegen";
    case TaskKind::kBp: return "bp";
    case TaskKind::kConditionalScenegen: return "conditional_scenegen";
    case TaskKind::kConditionalBp: return "conditional_bp";
    case TaskKind::kLogPerturb: return "log_perturb";
  }
  return "scenegen";
}

void TaskSpec::validate() const {
  if ((kind == TaskKind::kLogPerturb) != perturb_level.has_value())
    throw std::invalid_argument("perturbation level is required for log_perturb and only there");
  if (perturb_level && !(*perturb_level >= 0.0 && *perturb_level <= 1.0))
    throw std::invalid_argument("perturbation level must lie in [0, 1]");
  if (samples < 0) throw std::invalid_argument("samples must be >= 0");
  if (denoise_steps < 1) throw std::invalid_argument("denoise_steps must be >= 1");
}

namespace {

ValidityMask task_validity(const SceneTensor& log, const ConditioningContext& ctx) {
  if (ctx.validity.agents() == log.agents() && ctx.validity.steps() == log.steps()) return ctx.validity;
  return ValidityMask(log.agents(), log.steps(), true);
}

// ctx.inpaint plus, for behavior-prediction kinds, the logged history.
InpaintingSpec task_inpainting(const SceneTensor& log, const ConditioningContext& ctx, TaskKind kind) {
  const SceneShape& shape = log.shape();
  InpaintingSpec spec;
  spec.mask = Mask::dense(shape);
  spec.context = SceneTensor(shape);
  const bool has_user = ctx.inpaint.mask.broadcasts_to(shape) && ctx.inpaint.context.shape() == shape;
  const bool bp = kind == TaskKind::kBp || kind == TaskKind::kConditionalBp;
  for (int a = 0; a < shape.agents; ++a)
    for (int t = 0; t < shape.steps(); ++t)
      for (int d = 0; d < shape.features; ++d) {
        if (bp && t < shape.history) {
          spec.mask.set(a, t, d, true);
          spec.context.at(a, t, d) = log.at(a, t, d);
        } else if (has_user && ctx.inpaint.mask(a, t, d)) {
          spec.mask.set(a, t, d, true);
          spec.context.at(a, t, d) = ctx.inpaint.context.at(a, t, d);
        }
      }
  spec.validate();
  return spec;
}

TaskResult run_chains(const SceneTensor& log, const ConditioningContext& ctx, const TaskSpec& spec,
                      const Denoiser& denoiser, const SamplerGrid& grid, bool from_log) {
  spec.validate();
  TaskResult result;
  result.samples.resize(spec.samples);
  ConditioningContext c;
  c.validity = task_validity(log, ctx);
  c.road_points = ctx.road_points;
  c.inpaint = task_inpainting(log, ctx, spec.kind);
  if (c.validity.valid_agent_count() == 0) {
    for (auto& s : result.samples) s = SceneTensor(log.shape());
    return result;
  }
  const NoiseLevel start = schedule(grid[0]);
  std::vector<std::uint64_t> nfe(spec.samples, 0);
  const std::vector<ClipOperator> none;
  const auto& in_chain = spec.clip_in_diffusion ? spec.clips : none;
  parallel_for(spec.samples, spec.workers, [&](int k) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(k)));
    SceneTensor z = sample_normal(log.shape(), rng);
    if (from_log) {
      if (grid.steps() == 0) {
        result.samples[k] = log;
        return;
      }
      auto zv = z.values();
      const auto xv = log.values();
      for (std::size_t i = 0; i < zv.size(); ++i) zv[i] = start.alpha * xv[i] + start.sigma * zv[i];
    }
    ChainTrace trace;
    SceneTensor x = reverse_chain(std::move(z), grid, c, denoiser, spec.sampler, in_chain, rng, &trace);
    if (!spec.clip_in_diffusion && !spec.clips.empty()) x = post_diffusion_clip(x, spec.clips, c.validity);
    result.samples[k] = std::move(x);
    nfe[k] = trace.nfe;
  });
  for (auto n : nfe) result.nfe += n;
  return result;
}

}  // namespace

TaskResult run_scenegen(const SceneTensor& log, const ConditioningContext& ctx,
                        const TaskSpec& spec, const Denoiser& denoiser) {
  if (spec.kind == TaskKind::kLogPerturb)
    throw std::invalid_argument("run_scenegen does not handle log_perturb tasks");
  return run_chains(log, ctx, spec, denoiser, SamplerGrid(spec.denoise_steps, spec.spacing), false);
}

TaskResult run_log_perturbation(const SceneTensor& log, const ConditioningContext& ctx,
                                const TaskSpec& spec, const Denoiser& denoiser) {
  if (spec.kind != TaskKind::kLogPerturb)
    throw std::invalid_argument("run_log_perturbation needs a log_perturb task");
  spec.validate();
  const SamplerGrid grid = SamplerGrid(spec.denoise_steps, spec.spacing).truncated(*spec.perturb_level);
  return run_chains(log, ctx, spec, denoiser, grid, true);
}

double mean_displacement(const SceneTensor& a, const SceneTensor& b, const ValidityMask& validity,
                         const FeatureNormalizer& normalizer) {
  if (a.shape() != b.shape()) throw std::invalid_argument("scene shapes differ");
  double total = 0.0;
  std::size_t n = 0;
  for (int ag = 0; ag < a.agents(); ++ag)
    for (int t = 0; t < a.steps(); ++t) {
      if (validity.agents() == a.agents() && !validity(ag, t)) continue;
      const double dx = a.at(ag, t, channel::kX) - b.at(ag, t, channel::kX);
      const double dy = a.at(ag, t, channel::kY) - b.at(ag, t, channel::kY);
      total += normalizer.denormalize_position(std::hypot(dx, dy));
      ++n;
    }
  return n ? total / static_cast<double>(n) : 0.0;
}

double control_point_error(const SceneTensor& scene, const ConstraintConfig& config,
                           const CompiledConstraints& compiled, const FeatureNormalizer& normalizer) {
  double worst = 0.0;
  for (std::size_t i = 0; i < config.agents.size(); ++i)
    for (const auto& cp : config.agents[i].points) {
      const int step = cp.time_step + scene.history();
      const int slot = compiled.slots[i];
      const double x = normalizer.denormalize_position(scene.at(slot, step, channel::kX));
      const double y = normalizer.denormalize_position(scene.at(slot, step, channel::kY));
      worst = std::max(worst, std::hypot(x - cp.x, y - cp.y));
    }
  return worst;
}

}  // namespace trafficdiff
