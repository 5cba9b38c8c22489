// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trafficdiff/geometry.hpp"
#include "trafficdiff/scene.hpp"

namespace trafficdiff {

enum class Metric : int {
  kSpeed = 0,
  kAcceleration,
  kAngularSpeed,
  kAngularAcceleration,
  kDistanceToObject,
  kCollision,
  kTimeToCollision,
  kDistanceToRoadEdge,
  kOffroad,
};

inline constexpr int kMetricCount = 9;
inline constexpr double kNllProbabilityFloor = 1e-6;
inline constexpr double kTtcCap = 5.0;

const char* metric_name(int metric);

// Per (agent, step, metric) values with an absence flag.
class FeatureTable {
 public:
  FeatureTable() = default;
  FeatureTable(int agents, int steps);

  int agents() const { return agents_; }
  int steps() const { return steps_; }
  bool present(int a, int t, int j) const { return present_[index(a, t, j)] != 0; }
  double value(int a, int t, int j) const { return values_[index(a, t, j)]; }
  void set(int a, int t, int j, double v) {
    values_[index(a, t, j)] = v;
    present_[index(a, t, j)] = 1;
  }

 private:
  std::size_t index(int a, int t, int j) const {
    return (static_cast<std::size_t>(a) * steps_ + t) * kMetricCount + j;
  }
  int agents_ = 0;
  int steps_ = 0;
  std::vector<double> values_;
  std::vector<std::uint8_t> present_;
};

// Kinematics by finite differences on the 10 Hz grid; distances, collisions
// and time-to-collision from oriented boxes; road features from the road
// polygons (absent for an empty roadgraph).
FeatureTable extract_features(const WorldScene& scene, const RoadGraph& world);

struct HistogramSpec {
  double lo = 0.0;
  double hi = 1.0;
  int bins = 128;
};

// Default supports: speed [0,30], acceleration [0,20], angular [0,2pi],
// distances [-10,50], TTC [0,5], indicators 2 bins over [0,1].
std::array<HistogramSpec, kMetricCount> default_histogram_specs(int bins = 128);

class Histogram {
 public:
  Histogram() = default;
  // Empty input yields a uniform histogram.
  Histogram(const HistogramSpec& spec, std::span<const double> samples);
  static Histogram from_probabilities(const HistogramSpec& spec, std::vector<double> probabilities);

  int bin(double value) const;  // clamps to the edge bins
  double probability(int bin) const { return p_[bin]; }
  const std::vector<double>& probabilities() const { return p_; }
  const HistogramSpec& spec() const { return spec_; }

 private:
  HistogramSpec spec_;
  std::vector<double> p_;
};

// -log max(p(bin(value)), floor).
double nll(double value, const Histogram& histogram, double floor = kNllProbabilityFloor);

// NLL of the logged values of one scenario; entries flagged invalid where
// the logged value is absent or the step is invalid.
struct NllTable {
  int agents = 0;
  int steps = 0;
  std::vector<double> nll;           // (agent, step, metric)
  std::vector<std::uint8_t> valid;   // same layout

  NllTable() = default;
  NllTable(int agents, int steps);
  std::size_t index(int a, int t, int j) const {
    return (static_cast<std::size_t>(a) * steps + t) * kMetricCount + j;
  }
};

// Per-agent histograms pooled over samples and steps [first_step, T).
NllTable wosac_nll(const FeatureTable& logged, const ValidityMask& validity,
                   const std::vector<FeatureTable>& simulated, int first_step,
                   const std::array<HistogramSpec, kMetricCount>& specs);

// Per-scene histograms pooled over samples, agents and steps.
NllTable scenegen_nll(const FeatureTable& logged, const ValidityMask& validity,
                      const std::vector<FeatureTable>& simulated, int first_step,
                      const std::array<HistogramSpec, kMetricCount>& specs);

struct MetricsReport {
  std::array<double, kMetricCount> weights{};
  // m(i, j) per included scenario.
  std::vector<std::array<double, kMetricCount>> scenario_scores;
  // m(a, i, j); -1 where the agent has no valid point for metric j.
  std::vector<std::vector<std::array<double, kMetricCount>>> agent_scores;
  // N(i, a) per metric.
  std::vector<std::vector<std::array<int, kMetricCount>>> valid_counts;
  std::array<double, kMetricCount> metric_means{};
  std::vector<int> included;  // scenario indices contributing to the score
  std::vector<int> excluded;  // all-invalid scenarios
  double composite = 0.0;
};

std::array<double, kMetricCount> uniform_weights();

// m(a,i,j) = exp(-mean_t NLL), m(i,j) = mean over agents with N(i,a) > 0,
// score = (1/N') (1/M) sum_i sum_j w_j m(i,j).
MetricsReport wosac_aggregate(const std::vector<NllTable>& tables,
                              const std::array<double, kMetricCount>& weights = uniform_weights());

// Per scene: m(i,j) = exp(-mean NLL over all valid (agent, step)); then the
// same cross-scene average as wosac_aggregate.
MetricsReport scenegen_aggregate(const std::vector<NllTable>& tables,
                                 const std::array<double, kMetricCount>& weights = uniform_weights());

// Constant-velocity extrapolation of every agent from its last two valid
// history steps (constant pose with a single valid step).
WorldScene constant_velocity_rollout(const WorldScene& scene);

}  // namespace trafficdiff
