// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trafficdiff/denoiser.hpp"

namespace trafficdiff {

enum class SizePreset { kS, kM, kL };

SizePreset size_preset_from_string(const std::string& name);
const char* to_string(SizePreset preset);

struct NetworkConfig {
  int agents = 8;
  int history = 11;
  int future = 80;
  int features = channel::kCount;
  int patch = 1;             // temporal patch size, one of {8, 4, 2, 1}
  SizePreset preset = SizePreset::kS;
  double width_factor = 0.25;  // scales token dim of the preset
  // Explicit overrides of the preset (0 = use preset).
  int token_dim = 0;
  int layers = 0;
  int heads = 0;
  int noise_freqs = 8;       // sinusoidal noise embedding uses 2x this many inputs
  int road_tokens = 16;

  int steps() const { return history + future; }
  int resolved_token_dim() const;
  int resolved_layers() const;
  int resolved_heads() const;
  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

// Named view into the flat parameter vector.
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct ForwardCache;

// Spatiotemporal transformer predicting v from (z, t, context).
// Tokens are per-agent temporal patches. Each layer applies noise-modulated
// (scale/shift/gate) time-axis attention, agent-axis attention and an MLP;
// roadgraph points are pooled into a fixed number of tokens that the scene
// tokens cross-attend to once at the input.
class TransformerDenoiser final : public Denoiser {
 public:
  explicit TransformerDenoiser(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  const std::vector<ParamTensor>& layout() const { return layout_; }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::size_t param_count() const { return params_.size(); }
  const ParamTensor& param(const std::string& name) const;

  // Random init with zero-initialized modulation and output head, so the
  // fresh network predicts v = 0.
  void init(Rng& rng);
  // Random init of every parameter (including head and modulation); used by
  // gradient checks so no path is trivially zero.
  void init_dense(Rng& rng, double scale = 0.3);

  // Forward pass keeping intermediates for backward.
  SceneTensor forward(const SceneTensor& z, const NoiseVector& t, const ConditioningContext& ctx,
                      ForwardCache* cache) const;
  // Accumulates dLoss/dparams into grad (same layout as params) given
  // dLoss/dv̂.
  void backward(const ForwardCache& cache, const SceneTensor& grad_v,
                std::vector<double>& grad) const;

 protected:
  SceneTensor compute_v(const SceneTensor& z, const NoiseVector& t,
                        const ConditioningContext& ctx) const override;

 private:
  void add_param(const std::string& name, std::vector<int> shape);

  NetworkConfig config_;
  int dim_ = 0;
  int layers_ = 0;
  int heads_ = 0;
  std::vector<ParamTensor> layout_;
  std::vector<double> params_;
};

struct ForwardCacheDeleter {
  void operator()(ForwardCache* cache) const;
};
using ForwardCachePtr = std::unique_ptr<ForwardCache, ForwardCacheDeleter>;
ForwardCachePtr make_forward_cache();

// Squared-error v-loss averaged over valid entries (context entries
// included). Returns the loss and writes dLoss/dv̂.
double masked_v_loss(const SceneTensor& v_hat, const SceneTensor& v_target,
                     const ValidityMask& validity, SceneTensor* grad_v);

// One training example: a clean scene with its validity and road points.
struct TrainingExample {
  SceneTensor scene;
  ValidityMask validity;
  std::vector<Vec2> road_points;
};

enum class OptimizerKind { kSgdMomentum, kAdam };

struct TrainConfig {
  int batch_size = 8;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  OptimizerKind optimizer = OptimizerKind::kSgdMomentum;
  double grad_clip = 1.0;
  double monotone_prob = 0.5;   // vector t̂ instead of a shared uniform t
  double bp_prob = 0.5;         // behavior-prediction vs scene-generation mask
  double control_prob = 0.5;    // apply a random control mask at all
  std::vector<double> control_feature_probs;  // per channel; empty = 0.5 each
};

// Draws the diffusion time and task mask used for one training example.
struct TrainingDraw {
  NoiseVector t;
  bool monotone = false;
  bool behavior_prediction = false;
  Mask mask;
};

TrainingDraw draw_training_task(const TrainingExample& example, const TrainConfig& config,
                                Rng& rng);

struct TrainStepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
  bool applied = false;
  int monotone_count = 0;
};

class Trainer {
 public:
  Trainer(TransformerDenoiser& model, TrainConfig config);

  // One optimizer step on a batch; non-finite loss or gradient leaves the
  // parameters untouched and reports applied = false.
  TrainStepResult step(const std::vector<const TrainingExample*>& batch, Rng& rng);
  const TrainConfig& config() const { return config_; }
  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  std::int64_t steps_taken() const { return steps_; }

 private:
  TransformerDenoiser& model_;
  TrainConfig config_;
  std::vector<double> velocity_;
  std::vector<double> second_moment_;
  std::int64_t steps_ = 0;
};

// Builds the network conditioning context for an example and mask.
ConditioningContext make_training_context(const TrainingExample& example, const Mask& mask);

// JSON checkpoint with config and per-tensor shape manifest.
void save_checkpoint(const TransformerDenoiser& model, const std::string& path);
std::unique_ptr<TransformerDenoiser> load_checkpoint(const std::string& path);
std::string checkpoint_to_string(const TransformerDenoiser& model);
std::unique_ptr<TransformerDenoiser> checkpoint_from_string(const std::string& text);

}  // namespace trafficdiff
