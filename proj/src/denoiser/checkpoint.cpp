// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "trafficdiff/network.hpp"

namespace trafficdiff {
namespace {

constexpr const char* kFormat = "trafficdiff-denoiser";
constexpr int kVersion = 1;

nlohmann::json config_to_json(const NetworkConfig& c) {
  return {{"agents", c.agents},
          {"history", c.history},
          {"future", c.future},
          {"features", c.features},
          {"patch", c.patch},
          {"preset", to_string(c.preset)},
          {"width_factor", c.width_factor},
          {"token_dim", c.token_dim},
          {"layers", c.layers},
          {"heads", c.heads},
          {"noise_freqs", c.noise_freqs},
          {"road_tokens", c.road_tokens}};
}

NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.agents = j.at("agents").get<int>();
  c.history = j.at("history").get<int>();
  c.future = j.at("future").get<int>();
  c.features = j.at("features").get<int>();
  c.patch = j.at("patch").get<int>();
  c.preset = size_preset_from_string(j.at("preset").get<std::string>());
  c.width_factor = j.at("width_factor").get<double>();
  c.token_dim = j.at("token_dim").get<int>();
  c.layers = j.at("layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.noise_freqs = j.at("noise_freqs").get<int>();
  c.road_tokens = j.at("road_tokens").get<int>();
  return c;
}

}  // namespace

std::string checkpoint_to_string(const TransformerDenoiser& model) {
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["config"] = config_to_json(model.config());
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : model.layout()) {
    std::vector<double> values(model.params().begin() + static_cast<std::ptrdiff_t>(p.offset),
                               model.params().begin() + static_cast<std::ptrdiff_t>(p.offset + p.size));
    params.push_back({{"name", p.name}, {"shape", p.shape}, {"values", std::move(values)}});
  }
  j["params"] = std::move(params);
  return j.dump();
}

std::unique_ptr<TransformerDenoiser> checkpoint_from_string(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  if (j.value("format", std::string()) != kFormat)
    throw std::runtime_error("checkpoint: unrecognized format");
  if (j.value("version", 0) != kVersion)
    throw std::runtime_error("checkpoint: unsupported version");
  auto model = std::make_unique<TransformerDenoiser>(config_from_json(j.at("config")));
  const auto& params = j.at("params");
  if (params.size() != model->layout().size())
    throw std::runtime_error("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamTensor& p = model->layout()[i];
    if (params[i].at("name").get<std::string>() != p.name ||
        params[i].at("shape").get<std::vector<int>>() != p.shape)
      throw std::runtime_error("checkpoint: manifest mismatch at " + p.name);
    const auto values = params[i].at("values").get<std::vector<double>>();
    if (values.size() != p.size) throw std::runtime_error("checkpoint: size mismatch at " + p.name);
    std::copy(values.begin(), values.end(),
              model->params().begin() + static_cast<std::ptrdiff_t>(p.offset));
  }
  return model;
}

void save_checkpoint(const TransformerDenoiser& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << checkpoint_to_string(model);
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

std::unique_ptr<TransformerDenoiser> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

}  // namespace trafficdiff
