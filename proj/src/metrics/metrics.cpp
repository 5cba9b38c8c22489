// Copyright 2026 The trafficdiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "trafficdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace trafficdiff {

const char* metric_name(int metric) {
  static constexpr const char* kNames[kMetricCount] = {
      "linear_speed",         "linear_acceleration", "angular_speed",
      "angular_acceleration", "distance_to_object",  "collision",
      "time_to_collision",    "distance_to_road_edge", "offroad"};
  if (metric < 0 || metric >= kMetricCount) throw std::out_of_range("metric index");
  return kNames[metric];
}

FeatureTable::FeatureTable(int agents, int steps)
    : agents_(agents),
      steps_(steps),
      values_(static_cast<std::size_t>(agents) * steps * kMetricCount, 0.0),
      present_(values_.size(), 0) {}

namespace {

constexpr double kHz = 10.0;
constexpr int kSpeed = static_cast<int>(Metric::kSpeed);
constexpr int kAccel = static_cast<int>(Metric::kAcceleration);
constexpr int kAngSpeed = static_cast<int>(Metric::kAngularSpeed);
constexpr int kAngAccel = static_cast<int>(Metric::kAngularAcceleration);
constexpr int kDist = static_cast<int>(Metric::kDistanceToObject);
constexpr int kCollide = static_cast<int>(Metric::kCollision);
constexpr int kTtc = static_cast<int>(Metric::kTimeToCollision);
constexpr int kEdge = static_cast<int>(Metric::kDistanceToRoadEdge);
constexpr int kOff = static_cast<int>(Metric::kOffroad);

OrientedBox box_of(const AgentFeatures& f) { return {{f.x, f.y}, f.heading, f.length, f.width}; }

double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

}  // namespace

FeatureTable extract_features(const WorldScene& scene, const RoadGraph& world) {
  const int A = scene.shape.agents;
  const int T = scene.shape.steps();
  FeatureTable table(A, T);
  const ValidityMask& v = scene.validity;
  std::vector<double> omega(static_cast<std::size_t>(A) * T, 0.0);
  std::vector<std::uint8_t> has_omega(omega.size(), 0);

  for (int a = 0; a < A; ++a)
    for (int t = 1; t < T; ++t) {
      if (!v(a, t) || !v(a, t - 1)) continue;
      const auto& cur = scene.at(a, t);
      const auto& prev = scene.at(a, t - 1);
      table.set(a, t, kSpeed, std::hypot(cur.x - prev.x, cur.y - prev.y) * kHz);
      const double w = wrap_angle(cur.heading - prev.heading) * kHz;
      omega[static_cast<std::size_t>(a) * T + t] = w;
      has_omega[static_cast<std::size_t>(a) * T + t] = 1;
      table.set(a, t, kAngSpeed, std::abs(w));
      if (t >= 2 && table.present(a, t - 1, kSpeed)) {
        table.set(a, t, kAccel, std::abs(table.value(a, t, kSpeed) - table.value(a, t - 1, kSpeed)) * kHz);
        table.set(a, t, kAngAccel,
                  std::abs(w - omega[static_cast<std::size_t>(a) * T + t - 1]) * kHz);
      }
    }

  const bool has_road = !world.boundaries.empty();
  for (int t = 0; t < T; ++t) {
    for (int a = 0; a < A; ++a) {
      if (!v(a, t)) continue;
      const AgentFeatures& fa = scene.at(a, t);
      const OrientedBox ba = box_of(fa);
      double nearest = std::numeric_limits<double>::infinity();
      bool collide = false;
      for (int b = 0; b < A; ++b) {
        if (b == a || !v(b, t)) continue;
        const OrientedBox bb = box_of(scene.at(b, t));
        nearest = std::min(nearest, signed_box_distance(ba, bb));
        collide = collide || boxes_overlap(ba, bb);
      }
      if (std::isfinite(nearest)) table.set(a, t, kDist, nearest);
      table.set(a, t, kCollide, collide ? 1.0 : 0.0);

      // Time to collision under constant speed along each box heading.
      if (table.present(a, t, kSpeed)) {
        const double va = table.value(a, t, kSpeed);
        double ttc = kTtcCap;
        for (int b = 0; b < A && ttc > 0.0; ++b) {
          if (b == a || !v(b, t)) continue;
          const AgentFeatures& fb = scene.at(b, t);
          const double vb = table.present(b, t, kSpeed) ? table.value(b, t, kSpeed) : 0.0;
          const double reach = (va + vb) * kTtcCap + 0.5 * (std::hypot(fa.length, fa.width) +
                                                           std::hypot(fb.length, fb.width));
          if (std::hypot(fa.x - fb.x, fa.y - fb.y) > reach) continue;
          const Vec2 da{std::cos(fa.heading) * va, std::sin(fa.heading) * va};
          const Vec2 db{std::cos(fb.heading) * vb, std::sin(fb.heading) * vb};
          OrientedBox pa = ba;
          OrientedBox pb = box_of(fb);
          const Vec2 ca = pa.center, cb = pb.center;
          for (int k = 0; k <= static_cast<int>(kTtcCap * kHz); ++k) {
            const double tau = k / kHz;
            if (tau >= ttc) break;
            pa.center = ca + da * tau;
            pb.center = cb + db * tau;
            if (boxes_overlap(pa, pb)) {
              ttc = tau;
              break;
            }
          }
        }
        table.set(a, t, kTtc, ttc);
      }

      if (has_road) {
        const Vec2 p{fa.x, fa.y};
        table.set(a, t, kEdge, world.signed_distance_to_edge(p));
        table.set(a, t, kOff, world.onroad(p) ? 0.0 : 1.0);
      }
    }
  }
  return table;
}

std::array<HistogramSpec, kMetricCount> default_histogram_specs(int bins) {
  const double two_pi = 2.0 * std::numbers::pi;
  return {{{0.0, 30.0, bins},
           {0.0, 20.0, bins},
           {0.0, two_pi, bins},
           {0.0, two_pi, bins},
           {-10.0, 50.0, bins},
           {0.0, 1.0, 2},
           {0.0, kTtcCap, bins},
           {-10.0, 50.0, bins},
           {0.0, 1.0, 2}}};
}

Histogram::Histogram(const HistogramSpec& spec, std::span<const double> samples) : spec_(spec) {
  if (spec.bins < 1 || !(spec.hi > spec.lo)) throw std::invalid_argument("invalid histogram spec");
  p_.assign(spec.bins, 0.0);
  if (samples.empty()) {
    std::fill(p_.begin(), p_.end(), 1.0 / spec.bins);
    return;
  }
  for (double s : samples) p_[bin(s)] += 1.0;
  for (double& p : p_) p /= static_cast<double>(samples.size());
}

Histogram Histogram::from_probabilities(const HistogramSpec& spec, std::vector<double> probabilities) {
  if (static_cast<int>(probabilities.size()) != spec.bins)
    throw std::invalid_argument("probability count does not match bins");
  Histogram h;
  h.spec_ = spec;
  h.p_ = std::move(probabilities);
  return h;
}

int Histogram::bin(double value) const {
  if (std::isnan(value)) return 0;
  const double u = (value - spec_.lo) / (spec_.hi - spec_.lo) * spec_.bins;
  if (!(u > 0.0)) return 0;
  if (u >= spec_.bins) return spec_.bins - 1;
  return std::min(spec_.bins - 1, static_cast<int>(u));
}

double nll(double value, const Histogram& histogram, double floor) {
  return -std::log(std::max(histogram.probability(histogram.bin(value)), floor));
}

NllTable::NllTable(int a, int t)
    : agents(a),
      steps(t),
      nll(static_cast<std::size_t>(a) * t * kMetricCount, 0.0),
      valid(nll.size(), 0) {}

namespace {

void check_tables(const FeatureTable& logged, const ValidityMask& validity,
                  const std::vector<FeatureTable>& simulated, int first_step) {
  if (validity.agents() != logged.agents() || validity.steps() != logged.steps())
    throw std::invalid_argument("validity does not match the feature table");
  for (const auto& s : simulated)
    if (s.agents() != logged.agents() || s.steps() != logged.steps())
      throw std::invalid_argument("simulated feature table shape mismatch");
  if (first_step < 0 || first_step > logged.steps()) throw std::invalid_argument("first_step out of range");
}

void score_logged(const FeatureTable& logged, const ValidityMask& validity, int first_step, int agent,
                  int metric, const Histogram& h, NllTable& out) {
  for (int t = first_step; t < logged.steps(); ++t) {
    if (!validity(agent, t) || !logged.present(agent, t, metric)) continue;
    const std::size_t i = out.index(agent, t, metric);
    out.nll[i] = nll(logged.value(agent, t, metric), h);
    out.valid[i] = 1;
  }
}

}  // namespace

NllTable wosac_nll(const FeatureTable& logged, const ValidityMask& validity,
                   const std::vector<FeatureTable>& simulated, int first_step,
                   const std::array<HistogramSpec, kMetricCount>& specs) {
  check_tables(logged, validity, simulated, first_step);
  NllTable out(logged.agents(), logged.steps());
  std::vector<double> pool;
  for (int a = 0; a < logged.agents(); ++a)
    for (int j = 0; j < kMetricCount; ++j) {
      pool.clear();
      for (const auto& sim : simulated)
        for (int t = first_step; t < sim.steps(); ++t)
          if (sim.present(a, t, j)) pool.push_back(sim.value(a, t, j));
      score_logged(logged, validity, first_step, a, j, Histogram(specs[j], pool), out);
    }
  return out;
}

NllTable scenegen_nll(const FeatureTable& logged, const ValidityMask& validity,
                      const std::vector<FeatureTable>& simulated, int first_step,
                      const std::array<HistogramSpec, kMetricCount>& specs) {
  check_tables(logged, validity, simulated, first_step);
  NllTable out(logged.agents(), logged.steps());
  std::vector<double> pool;
  for (int j = 0; j < kMetricCount; ++j) {
    pool.clear();
    for (const auto& sim : simulated)
      for (int a = 0; a < sim.agents(); ++a)
        for (int t = first_step; t < sim.steps(); ++t)
          if (sim.present(a, t, j)) pool.push_back(sim.value(a, t, j));
    // Sorting makes the pooled histogram independent of sample and agent
    // order down to the last bit.
    std::sort(pool.begin(), pool.end());
    const Histogram h(specs[j], pool);
    for (int a = 0; a < logged.agents(); ++a) score_logged(logged, validity, first_step, a, j, h, out);
  }
  return out;
}

std::array<double, kMetricCount> uniform_weights() {
  std::array<double, kMetricCount> w;
  w.fill(1.0);
  return w;
}

namespace {

void finish_report(MetricsReport& r) {
  r.metric_means.fill(0.0);
  double total = 0.0;
  for (const auto& s : r.scenario_scores)
    for (int j = 0; j < kMetricCount; ++j) {
      r.metric_means[j] += s[j];
      total += r.weights[j] * s[j];
    }
  const double n = static_cast<double>(r.scenario_scores.size());
  if (n > 0) {
    for (double& m : r.metric_means) m /= n;
    r.composite = total / n / kMetricCount;
  }
}

void check_weights(const std::array<double, kMetricCount>& weights) {
  for (double w : weights)
    if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument("metric weights must lie in [0, 1]");
}

}  // namespace

MetricsReport wosac_aggregate(const std::vector<NllTable>& tables,
                              const std::array<double, kMetricCount>& weights) {
  check_weights(weights);
  MetricsReport r;
  r.weights = weights;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const NllTable& tab = tables[i];
    std::vector<std::array<double, kMetricCount>> agent_scores(tab.agents);
    std::vector<std::array<int, kMetricCount>> counts(tab.agents);
    std::array<double, kMetricCount> scenario{};
    std::array<int, kMetricCount> contributing{};
    bool any = false;
    for (int a = 0; a < tab.agents; ++a)
      for (int j = 0; j < kMetricCount; ++j) {
        double sum = 0.0;
        int n = 0;
        for (int t = 0; t < tab.steps; ++t) {
          const std::size_t k = tab.index(a, t, j);
          if (!tab.valid[k]) continue;
          sum += tab.nll[k];
          ++n;
        }
        counts[a][j] = n;
        if (n == 0) {
          agent_scores[a][j] = -1.0;
          continue;
        }
        any = true;
        agent_scores[a][j] = std::exp(-sum / n);
        scenario[j] += agent_scores[a][j];
        ++contributing[j];
      }
    if (!any) {
      r.excluded.push_back(static_cast<int>(i));
      continue;
    }
    // A metric no agent could be scored on (e.g. no road) counts as 1.
    for (int j = 0; j < kMetricCount; ++j)
      scenario[j] = contributing[j] ? scenario[j] / contributing[j] : 1.0;
    r.included.push_back(static_cast<int>(i));
    r.scenario_scores.push_back(scenario);
    r.agent_scores.push_back(std::move(agent_scores));
    r.valid_counts.push_back(std::move(counts));
  }
  finish_report(r);
  return r;
}

MetricsReport scenegen_aggregate(const std::vector<NllTable>& tables,
                                 const std::array<double, kMetricCount>& weights) {
  check_weights(weights);
  MetricsReport r;
  r.weights = weights;
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const NllTable& tab = tables[i];
    std::array<double, kMetricCount> scenario{};
    std::vector<std::array<int, kMetricCount>> counts(tab.agents);
    bool any = false;
    for (int j = 0; j < kMetricCount; ++j) {
      double sum = 0.0;
      int n = 0;
      for (int a = 0; a < tab.agents; ++a) {
        int na = 0;
        for (int t = 0; t < tab.steps; ++t) {
          const std::size_t k = tab.index(a, t, j);
          if (!tab.valid[k]) continue;
          sum += tab.nll[k];
          ++na;
        }
        counts[a][j] = na;
        n += na;
      }
      any = any || n > 0;
      scenario[j] = n ? std::exp(-sum / n) : 1.0;
    }
    if (!any) {
      r.excluded.push_back(static_cast<int>(i));
      continue;
    }
    r.included.push_back(static_cast<int>(i));
    r.scenario_scores.push_back(scenario);
    r.valid_counts.push_back(std::move(counts));
  }
  finish_report(r);
  return r;
}

WorldScene constant_velocity_rollout(const WorldScene& scene) {
  WorldScene out = scene;
  const int H = scene.shape.history;
  const int T = scene.shape.steps();
  for (int a = 0; a < scene.shape.agents; ++a) {
    int last = -1, prev = -1;
    for (int t = H - 1; t >= 0; --t)
      if (scene.validity(a, t)) {
        if (last < 0) {
          last = t;
        } else {
          prev = t;
          break;
        }
      }
    if (last < 0) continue;
    const AgentFeatures& fl = scene.at(a, last);
    double vx = 0.0, vy = 0.0;
    if (prev >= 0) {
      const AgentFeatures& fp = scene.at(a, prev);
      vx = (fl.x - fp.x) / (last - prev);
      vy = (fl.y - fp.y) / (last - prev);
    }
    for (int t = H; t < T; ++t) {
      AgentFeatures f = fl;
      f.x = fl.x + vx * (t - last);
      f.y = fl.y + vy * (t - last);
      out.at(a, t) = f;
    }
  }
  return out;
}

}  // namespace trafficdiff
