// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "CLI11.hpp"
#include "trafficdiff/constraints.hpp"
#include "trafficdiff/io.hpp"
#include "trafficdiff/metrics.hpp"
#include "trafficdiff/network.hpp"
#include "trafficdiff/render.hpp"
#include "trafficdiff/rollout.hpp"
#include "trafficdiff/tasks.hpp"
#include "trafficdiff/text_config.hpp"
#include "trafficdiff/world.hpp"

namespace trafficdiff {

namespace {

namespace fs = std::filesystem;

// Bad flag values that CLI11 cannot catch on its own.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Common {
  std::uint64_t seed = 0;
  std::string out;
  int workers = 0;
  std::string config;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--out", c.out, "Output path");
  cmd->add_option("--workers", c.workers, "Worker threads (default: available parallelism)");
  cmd->add_option("--config", c.config, "Key-value file supplying default flag values");
}

int worker_count(const Common& c) {
  if (c.workers > 0) return c.workers;
  return std::max(1u, std::thread::hardware_concurrency());
}

// --out if given, else the default name under $TRAFFICDIFF_OUT_DIR (or the
// working directory).
std::string output_path(const Common& c, const std::string& default_name) {
  if (!c.out.empty()) return c.out;
  const char* dir = std::getenv("TRAFFICDIFF_OUT_DIR");
  return (fs::path(dir && *dir ? dir : ".") / default_name).string();
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

void write_json(const std::string& path, const Json& j) {
  ensure_parent(path);
  write_json_file(path, j);
}

// Flags from `--config FILE` are appended unless given on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  std::vector<std::string> out = args;
  for (std::size_t i = 0; i + 1 < args.size(); ++i) {
    if (args[i] != "--config") continue;
    const TextNode node = parse_text_config(read_text(args[i + 1]));
    for (const auto& f : node.fields) {
      if (f.is_block()) throw ConfigError(f.line, f.column, "config values must be scalars");
      const std::string flag = "--" + f.key;
      if (std::find(args.begin(), args.end(), flag) != args.end()) continue;
      if (f.value == "false") continue;
      out.push_back(flag);
      if (f.value != "true") out.push_back(f.value);
    }
  }
  return out;
}

struct LoadedScenario {
  Scenario scenario;
  SceneTensor scene;
  std::vector<Vec2> road_points;
};

LoadedScenario load_scenario(const std::string& path) {
  LoadedScenario l;
  l.scenario = scenario_from_json(read_json_file(path));
  l.scene = normalize_scene(l.scenario.log);
  l.road_points = road_points(l.scenario.road);
  return l;
}

std::unique_ptr<Denoiser> load_denoiser(const LoadedScenario& s, const std::string& checkpoint) {
  if (!checkpoint.empty()) {
    auto model = load_checkpoint(checkpoint);
    const NetworkConfig& c = model->config();
    if (c.agents != s.scene.agents() || c.history != s.scene.history() || c.future != s.scene.future())
      throw std::invalid_argument("checkpoint shape does not match the scenario");
    return model;
  }
  if (!s.scenario.mixture)
    throw std::invalid_argument("scenario has no world block; pass --checkpoint");
  return std::make_unique<OracleDenoiser>(prior_as_mixture(s.scenario.road, *s.scenario.mixture));
}

ConditioningContext base_context(const LoadedScenario& s) {
  ConditioningContext ctx = ConditioningContext::unconditional(s.scene.shape());
  ctx.validity = s.scenario.log.validity;
  ctx.road_points = s.road_points;
  return ctx;
}

WorldScene to_world(const SceneTensor& x, const ValidityMask& validity) {
  return denormalize_scene(x, FeatureNormalizer{}, validity);
}

// ---------------------------------------------------------------- synth-data
struct SynthArgs {
  Common common;
  std::string tmpl = "straight";
  int scenes = 10;
  int agents = 3;  // keeps the default oracle prior within its 27-component cap
  int capacity = 8;
  int history = 11;
  int future = 80;
  int lanes = 2;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const WorldTemplate tmpl = world_template_from_string(a.tmpl);
  if (a.scenes < 0) throw UsageError("--scenes must be >= 0");
  if (a.agents < 0 || a.agents > a.capacity) throw UsageError("--agents must lie in [0, capacity]");
  const std::string dir = output_path(a.common, "data");
  fs::create_directories(dir);
  WorldParams params;
  params.lanes = a.lanes;
  ScenarioOptions opts;
  opts.agents = a.agents;
  std::vector<std::string> files(a.scenes);
  parallel_for(a.scenes, worker_count(a.common), [&](int i) {
    Rng rng(derive_seed(a.common.seed, static_cast<std::uint64_t>(i)));
    Scenario s;
    s.road = build_world(tmpl, params, rng);
    BehaviorMixture m = random_mixture(tmpl, params, a.capacity, a.history, a.future, opts, rng);
    s.log = sample_scene(s.road, m, rng).raw;
    s.mixture = std::move(m);
    char name[32];
    std::snprintf(name, sizeof(name), "scenario_%05d.json", i);
    s.name = name;
    write_json_file((fs::path(dir) / name).string(), scenario_to_json(s));
    files[i] = name;
  });
  write_json((fs::path(dir) / "manifest.json").string(),
             {{"format", "trafficdiff-dataset"}, {"template", a.tmpl}, {"seed", a.common.seed},
              {"scenarios", files}});
  out << Json{{"status", "ok"}, {"scenes", a.scenes}, {"out", dir}}.dump() << "\n";
  return 0;
}

// --------------------------------------------------------------------- train
struct TrainArgs {
  Common common;
  std::string data;
  int steps = 200;
  int batch = 8;
  double lr = 0.05;
  std::string optimizer = "sgd";
  std::string preset = "S";
  double width_factor = 0.25;
  int patch = 1;
  int token_dim = 0;
  int layers = 0;
  int heads = 0;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.data.empty()) throw UsageError("--data is required");
  if (a.steps < 0 || a.batch < 1) throw UsageError("--steps must be >= 0 and --batch >= 1");
  const Json manifest = read_json_file((fs::path(a.data) / "manifest.json").string());
  std::vector<TrainingExample> examples;
  for (const auto& f : manifest.at("scenarios")) {
    const LoadedScenario s = load_scenario((fs::path(a.data) / f.get<std::string>()).string());
    examples.push_back({s.scene, s.scenario.log.validity, s.road_points});
  }
  if (examples.empty()) throw std::invalid_argument("dataset is empty");
  NetworkConfig nc;
  nc.agents = examples[0].scene.agents();
  nc.history = examples[0].scene.history();
  nc.future = examples[0].scene.future();
  nc.patch = a.patch;
  nc.preset = size_preset_from_string(a.preset);
  nc.width_factor = a.width_factor;
  nc.token_dim = a.token_dim;
  nc.layers = a.layers;
  nc.heads = a.heads;
  for (const auto& e : examples)
    if (e.scene.shape() != examples[0].scene.shape()) throw std::invalid_argument("dataset scenes differ in shape");
  TransformerDenoiser model(nc);
  Rng rng(a.common.seed);
  model.init(rng);
  TrainConfig tc;
  tc.batch_size = a.batch;
  tc.learning_rate = a.lr;
  if (a.optimizer == "adam") tc.optimizer = OptimizerKind::kAdam;
  else if (a.optimizer == "sgd") tc.optimizer = OptimizerKind::kSgdMomentum;
  else throw UsageError("--optimizer must be sgd or adam");
  Trainer trainer(model, tc);
  double last = 0.0;
  std::vector<const TrainingExample*> batch(a.batch);
  for (int s = 0; s < a.steps; ++s) {
    for (auto& b : batch) b = &examples[rng.uniform_int(0, static_cast<int>(examples.size()) - 1)];
    last = trainer.step(batch, rng).loss;
  }
  const std::string path = output_path(a.common, "model.json");
  ensure_parent(path);
  save_checkpoint(model, path);
  out << Json{{"status", "ok"}, {"steps", a.steps}, {"final_loss", last}, {"parameters", model.param_count()},
              {"out", path}}.dump()
      << "\n";
  return 0;
}

// ------------------------------------------------------------------ generate
struct GenerateArgs {
  Common common;
  std::string scenario;
  std::string constraints;
  std::string checkpoint;
  std::string task = "scenegen";
  int samples = 4;
  int steps = 16;
  std::string sampler = "ancestral";
  bool post_clip = false;
};

Json samples_json(const std::vector<SceneTensor>& xs, const ValidityMask& validity) {
  Json arr = Json::array();
  for (std::size_t k = 0; k < xs.size(); ++k)
    arr.push_back({{"sample", k}, {"scene", scene_to_json(to_world(xs[k], validity))}});
  return arr;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  if (a.scenario.empty()) throw UsageError("--scenario is required");
  const LoadedScenario s = load_scenario(a.scenario);
  const auto denoiser = load_denoiser(s, a.checkpoint);
  ConstraintConfig cfg;
  if (!a.constraints.empty()) cfg = parse_constraint_config(read_text(a.constraints));
  const CompiledConstraints compiled =
      compile_constraints(cfg, s.scene.shape(), s.scenario.log.validity, &s.scenario.road);
  TaskSpec spec;
  spec.kind = task_kind_from_string(a.task);
  if (spec.kind == TaskKind::kLogPerturb) throw UsageError("use the perturb subcommand for log perturbation");
  spec.samples = a.samples;
  spec.denoise_steps = a.steps;
  spec.sampler = sampler_from_string(a.sampler);
  spec.seed = a.common.seed;
  spec.clips = compiled.clips;
  spec.clip_in_diffusion = !a.post_clip;
  spec.workers = worker_count(a.common);
  ConditioningContext ctx = base_context(s);
  ctx.validity = compiled.validity;
  ctx.inpaint = compiled.inpaint;
  const TaskResult r = run_scenegen(s.scene, ctx, spec, *denoiser);
  Json samples = samples_json(r.samples, compiled.validity);
  for (std::size_t k = 0; k < r.samples.size(); ++k) {
    samples[k]["box_overlaps"] = count_box_overlaps(r.samples[k], compiled.validity);
    samples[k]["control_point_error_m"] = control_point_error(r.samples[k], cfg, compiled);
  }
  Scenario embedded = s.scenario;
  const std::string path = output_path(a.common, "scenes.json");
  write_json(path, {{"format", "trafficdiff-scenes"},
                    {"task", to_string(spec.kind)},
                    {"seed", a.common.seed},
                    {"denoise_steps", a.steps},
                    {"sampler", a.sampler},
                    {"clip_in_diffusion", spec.clip_in_diffusion},
                    {"constraints", serialize_constraint_config(cfg)},
                    {"nfe", r.nfe},
                    {"scenario", scenario_to_json(embedded)},
                    {"samples", samples}});
  out << Json{{"status", "ok"}, {"samples", r.samples.size()}, {"nfe", r.nfe}, {"out", path}}.dump() << "\n";
  return 0;
}

// ------------------------------------------------------------------- rollout
struct RolloutArgs {
  Common common;
  std::string scenario;
  std::string checkpoint;
  std::string mode = "amortized";
  double replan_hz = 10.0;
  int steps = 16;
  int samples = 1;
  std::string sampler = "ancestral";
};

int cmd_rollout(const RolloutArgs& a, std::ostream& out) {
  if (a.scenario.empty()) throw UsageError("--scenario is required");
  RolloutConfig config;
  try {
    config.mode = rollout_mode_from_string(a.mode);
    config.sampler = sampler_from_string(a.sampler);
    config.replan_hz = a.replan_hz;
    config.denoise_steps = a.steps;
    config.seed = a.common.seed;
    config.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (a.samples < 1) throw UsageError("--samples must be >= 1");
  const LoadedScenario s = load_scenario(a.scenario);
  const auto denoiser = load_denoiser(s, a.checkpoint);
  const ConditioningContext ctx = base_context(s);
  const auto results = rollout_samples(s.scene, ctx, *denoiser, config, a.samples, worker_count(a.common));
  Json rollouts = Json::array();
  for (std::size_t k = 0; k < results.size(); ++k)
    rollouts.push_back({{"sample", k},
                        {"seed", results[k].seed},
                        {"nfe", results[k].nfe},
                        {"replans", results[k].replans},
                        {"noise_levels", results[k].noise_levels},
                        {"scene", scene_to_json(to_world(results[k].scene, s.scenario.log.validity))}});
  const std::string path = output_path(a.common, "rollouts.json");
  write_json(path, {{"format", "trafficdiff-rollouts"},
                    {"mode", to_string(config.mode)},
                    {"replan_hz", config.replan_hz},
                    {"denoise_steps", config.denoise_steps},
                    {"sampler", to_string(config.sampler)},
                    {"seed", config.seed},
                    {"expected_nfe", expected_nfe(config, s.scene.future())},
                    {"scenario", scenario_to_json(s.scenario)},
                    {"rollouts", rollouts}});
  out << Json{{"status", "ok"}, {"samples", results.size()}, {"nfe", results.empty() ? 0 : results[0].nfe},
              {"out", path}}.dump()
      << "\n";
  return 0;
}

// ------------------------------------------------------------------- perturb
struct PerturbArgs {
  Common common;
  std::string scenario;
  std::string checkpoint;
  double level = 0.5;
  int samples = 4;
  int steps = 16;
};

int cmd_perturb(const PerturbArgs& a, std::ostream& out) {
  if (a.scenario.empty()) throw UsageError("--scenario is required");
  if (!(a.level >= 0.0 && a.level <= 1.0)) throw UsageError("--level must lie in [0, 1]");
  const LoadedScenario s = load_scenario(a.scenario);
  const auto denoiser = load_denoiser(s, a.checkpoint);
  TaskSpec spec;
  spec.kind = TaskKind::kLogPerturb;
  spec.perturb_level = a.level;
  spec.samples = a.samples;
  spec.denoise_steps = a.steps;
  spec.seed = a.common.seed;
  spec.workers = worker_count(a.common);
  const TaskResult r = run_log_perturbation(s.scene, base_context(s), spec, *denoiser);
  Json samples = samples_json(r.samples, s.scenario.log.validity);
  for (std::size_t k = 0; k < r.samples.size(); ++k)
    samples[k]["mean_displacement_m"] = mean_displacement(r.samples[k], s.scene, s.scenario.log.validity);
  const std::string path = output_path(a.common, "perturbed.json");
  write_json(path, {{"format", "trafficdiff-scenes"},
                    {"task", "log_perturb"},
                    {"level", a.level},
                    {"seed", a.common.seed},
                    {"nfe", r.nfe},
                    {"scenario", scenario_to_json(s.scenario)},
                    {"samples", samples}});
  out << Json{{"status", "ok"}, {"samples", r.samples.size()}, {"out", path}}.dump() << "\n";
  return 0;
}

// ------------------------------------------------------------------ evaluate
struct EvaluateArgs {
  Common common;
  std::string mode = "wosac";
  std::vector<std::string> rollouts;
  std::vector<std::string> logs;
  int bins = 128;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  if (a.rollouts.empty()) throw UsageError("--rollouts is required");
  if (a.mode != "wosac" && a.mode != "scenegen") throw UsageError("--mode must be wosac or scenegen");
  if (!a.logs.empty() && a.logs.size() != a.rollouts.size())
    throw UsageError("give one --log per --rollouts file");
  if (a.bins < 1) throw UsageError("--bins must be >= 1");
  const auto specs = default_histogram_specs(a.bins);
  std::vector<NllTable> tables;
  Json per_file = Json::array();
  for (std::size_t i = 0; i < a.rollouts.size(); ++i) {
    const Json rj = read_json_file(a.rollouts[i]);
    const Scenario scenario =
        a.logs.empty() ? scenario_from_json(rj.at("scenario")) : scenario_from_json(read_json_file(a.logs[i]));
    const Json& items = rj.contains("rollouts") ? rj.at("rollouts") : rj.at("samples");
    std::vector<FeatureTable> sims;
    for (const auto& item : items) {
      const WorldScene sim = scene_from_json(item.at("scene"));
      if (sim.shape != scenario.log.shape) throw std::invalid_argument("rollout shape does not match the log");
      sims.push_back(extract_features(sim, scenario.road));
    }
    const FeatureTable logged = extract_features(scenario.log, scenario.road);
    const int first = a.mode == "wosac" ? scenario.log.shape.history : 0;
    tables.push_back(a.mode == "wosac" ? wosac_nll(logged, scenario.log.validity, sims, first, specs)
                                       : scenegen_nll(logged, scenario.log.validity, sims, first, specs));
    per_file.push_back({{"rollouts", a.rollouts[i]}, {"samples", sims.size()}});
  }
  const MetricsReport report = a.mode == "wosac" ? wosac_aggregate(tables) : scenegen_aggregate(tables);
  Json names = Json::array();
  for (int j = 0; j < kMetricCount; ++j) names.push_back(metric_name(j));
  Json nll_tables = Json::array();
  for (const auto& t : tables)
    nll_tables.push_back({{"agents", t.agents}, {"steps", t.steps}, {"nll", t.nll}, {"valid", t.valid}});
  const std::string path = output_path(a.common, "report.json");
  write_json(path, {{"format", "trafficdiff-report"},
                    {"mode", a.mode},
                    {"bins", a.bins},
                    {"metrics", names},
                    {"weights", report.weights},
                    {"composite", report.composite},
                    {"metric_means", report.metric_means},
                    {"scenario_scores", report.scenario_scores},
                    {"agent_scores", report.agent_scores},
                    {"valid_counts", report.valid_counts},
                    {"included", report.included},
                    {"excluded", report.excluded},
                    {"inputs", per_file},
                    {"nll_tables", nll_tables}});
  out << Json{{"status", "ok"}, {"composite", report.composite}, {"out", path}}.dump() << "\n";
  return 0;
}

// -------------------------------------------------------------------- render
struct RenderArgs {
  Common common;
  std::string scenario;
  std::string rollouts;
  int sample = 0;
  int stride = 1;
  std::vector<int> injected;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  if (a.scenario.empty() && a.rollouts.empty()) throw UsageError("--scenario or --rollouts is required");
  if (a.stride < 1) throw UsageError("--stride must be >= 1");
  Scenario scenario;
  WorldScene scene;
  if (!a.rollouts.empty()) {
    const Json rj = read_json_file(a.rollouts);
    scenario = scenario_from_json(rj.at("scenario"));
    const Json& items = rj.contains("rollouts") ? rj.at("rollouts") : rj.at("samples");
    if (a.sample < 0 || a.sample >= static_cast<int>(items.size())) throw UsageError("--sample out of range");
    scene = scene_from_json(items.at(a.sample).at("scene"));
  } else {
    scenario = scenario_from_json(read_json_file(a.scenario));
    scene = scenario.log;
  }
  RenderSpec spec;
  spec.stride = a.stride;
  spec.injected = a.injected;
  const std::string path = output_path(a.common, "scene.svg");
  write_text(path, render_scene_svg(scene, scenario.road, spec));
  out << Json{{"status", "ok"}, {"out", path}}.dump() << "\n";
  return 0;
}

void print_error(std::ostream& err, const std::string& type, const std::string& message) {
  err << Json{{"error", {{"type", type}, {"message", message}}}}.dump() << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diffusion-based multi-agent traffic scene generation and rollout", "trafficdiff"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth-data", "Generate synthetic scenarios");
  add_common(c_synth, synth.common);
  c_synth->add_option("--template", synth.tmpl, "straight | curve | intersection");
  c_synth->add_option("--scenes", synth.scenes, "Number of scenarios");
  c_synth->add_option("--agents", synth.agents, "Agents per scenario");
  c_synth->add_option("--capacity", synth.capacity, "Agent slots per scene tensor");
  c_synth->add_option("--history", synth.history, "History steps");
  c_synth->add_option("--future", synth.future, "Future steps");
  c_synth->add_option("--lanes", synth.lanes, "Lanes per road");

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train the network denoiser");
  add_common(c_train, train.common);
  c_train->add_option("--data", train.data, "Dataset directory from synth-data");
  c_train->add_option("--steps", train.steps, "Optimizer steps");
  c_train->add_option("--batch", train.batch, "Batch size");
  c_train->add_option("--lr", train.lr, "Learning rate");
  c_train->add_option("--optimizer", train.optimizer, "sgd | adam");
  c_train->add_option("--preset", train.preset, "S | M | L");
  c_train->add_option("--width-factor", train.width_factor, "Token width multiplier");
  c_train->add_option("--patch", train.patch, "Temporal patch size");
  c_train->add_option("--token-dim", train.token_dim, "Token dimension override");
  c_train->add_option("--layers", train.layers, "Layer count override");
  c_train->add_option("--heads", train.heads, "Head count override");

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Scene generation with optional constraints");
  add_common(c_gen, gen.common);
  c_gen->add_option("--scenario", gen.scenario, "Scenario JSON");
  c_gen->add_option("--constraints", gen.constraints, "Constraint config file");
  c_gen->add_option("--checkpoint", gen.checkpoint, "Network checkpoint (default: analytic oracle)");
  c_gen->add_option("--task", gen.task, "scenegen | bp | conditional_scenegen | conditional_bp");
  c_gen->add_option("--samples", gen.samples, "Samples K");
  c_gen->add_option("--steps", gen.steps, "Denoising steps");
  c_gen->add_option("--sampler", gen.sampler, "ancestral | heun");
  c_gen->add_flag("--post-clip", gen.post_clip, "Apply hard constraints once after diffusion");

  RolloutArgs roll;
  auto* c_roll = app.add_subcommand("rollout", "Closed- or open-loop rollout");
  add_common(c_roll, roll.common);
  c_roll->add_option("--scenario", roll.scenario, "Scenario JSON");
  c_roll->add_option("--checkpoint", roll.checkpoint, "Network checkpoint (default: analytic oracle)");
  c_roll->add_option("--mode", roll.mode, "one-shot | full-ar | amortized");
  c_roll->add_option("--replan-hz", roll.replan_hz, "Full AR replan rate (divides 10 Hz)");
  c_roll->add_option("--steps", roll.steps, "Denoising steps");
  c_roll->add_option("--samples", roll.samples, "Rollouts K");
  c_roll->add_option("--sampler", roll.sampler, "ancestral | heun");

  PerturbArgs pert;
  auto* c_pert = app.add_subcommand("perturb", "Log perturbation");
  add_common(c_pert, pert.common);
  c_pert->add_option("--scenario", pert.scenario, "Scenario JSON");
  c_pert->add_option("--checkpoint", pert.checkpoint, "Network checkpoint (default: analytic oracle)");
  c_pert->add_option("--level", pert.level, "Perturbation level t* in [0, 1]");
  c_pert->add_option("--samples", pert.samples, "Samples K");
  c_pert->add_option("--steps", pert.steps, "Denoising steps of the full grid");

  EvaluateArgs eval;
  auto* c_eval = app.add_subcommand("evaluate", "Histogram-NLL realism metrics");
  add_common(c_eval, eval.common);
  c_eval->add_option("--mode", eval.mode, "wosac | scenegen");
  c_eval->add_option("--rollouts", eval.rollouts, "Rollout or scene files (repeatable)");
  c_eval->add_option("--log", eval.logs, "Scenario JSON per rollout file (default: embedded)");
  c_eval->add_option("--bins", eval.bins, "Histogram bins");

  RenderArgs rend;
  auto* c_rend = app.add_subcommand("render", "SVG rendering of a scene");
  add_common(c_rend, rend.common);
  c_rend->add_option("--scenario", rend.scenario, "Scenario JSON");
  c_rend->add_option("--rollouts", rend.rollouts, "Rollout or scene file");
  c_rend->add_option("--sample", rend.sample, "Sample index in --rollouts");
  c_rend->add_option("--stride", rend.stride, "Draw every k-th step");
  c_rend->add_option("--injected", rend.injected, "Agents drawn with the injected palette");

  std::vector<std::string> args;
  try {
    args = expand_config(raw_args);
  } catch (const ConfigError& e) {
    print_error(err, "config_error", e.what());
    return 2;
  } catch (const std::exception& e) {
    print_error(err, "io_error", e.what());
    return 1;
  }
  std::vector<std::string> reversed(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << app.help();
    print_error(err, "usage_error", e.what());
    return 2;
  }

  try {
    if (c_synth->parsed()) return cmd_synth(synth, out);
    if (c_train->parsed()) return cmd_train(train, out);
    if (c_gen->parsed()) return cmd_generate(gen, out);
    if (c_roll->parsed()) return cmd_rollout(roll, out);
    if (c_pert->parsed()) return cmd_perturb(pert, out);
    if (c_eval->parsed()) return cmd_evaluate(eval, out);
    if (c_rend->parsed()) return cmd_render(rend, out);
  } catch (const UsageError& e) {
    print_error(err, "usage_error", e.what());
    return 2;
  } catch (const ConfigError& e) {
    print_error(err, "config_error", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "runtime_error", e.what());
    return 1;
  }
  return 2;
}

}  // namespace trafficdiff
