// Copyright 2026 The mixedlane Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mixedlane/log_io.hpp"

namespace mixedlane {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0: one per core).
/// The first exception thrown by any call is rethrown.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  const auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

/// Seeds base, base + 1, ..., base + count - 1.
inline std::vector<std::uint64_t> batch_seeds(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = base + i;
  return out;
}

struct MeanStd {
  double mean{0.0};
  double std{0.0};
  std::size_t n{0};
};

/// Sample mean and (n - 1) standard deviation.
inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd out;
  out.n = xs.size();
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

struct RunResult {
  std::uint64_t seed{0};
  Metrics metrics{};
  /// Worst constraint violation of any QP reported optimal.
  double max_optimal_violation{0.0};
};

/// Per-run rows plus the aggregates derived from them.
struct BatchReport {
  std::string label;
  std::string config_hash;
  std::vector<RunResult> runs;

  std::vector<std::uint64_t> seeds() const {
    std::vector<std::uint64_t> out;
    for (const RunResult& r : runs) out.push_back(r.seed);
    return out;
  }
  std::size_t count(Outcome o) const {
    return static_cast<std::size_t>(
        std::count_if(runs.begin(), runs.end(), [&](const RunResult& r) { return r.metrics.outcome == o; }));
  }
  std::size_t count(MergeSide side) const {
    return static_cast<std::size_t>(std::count_if(
        runs.begin(), runs.end(), [&](const RunResult& r) { return r.metrics.merge_side == side; }));
  }
  /// Runs where any barrier went negative.
  std::size_t violations() const {
    return static_cast<std::size_t>(std::count_if(
        runs.begin(), runs.end(), [](const RunResult& r) { return r.metrics.min_over_pairs() < 0.0; }));
  }
  /// Runs where b_CH went negative.
  std::size_t ch_violations() const {
    return static_cast<std::size_t>(
        std::count_if(runs.begin(), runs.end(), [](const RunResult& r) { return r.metrics.safety() < 0.0; }));
  }
  std::size_t runs_with_fallback() const {
    return static_cast<std::size_t>(std::count_if(
        runs.begin(), runs.end(), [](const RunResult& r) { return r.metrics.fallback_count > 0; }));
  }
  /// Minimum of b_CH over all runs.
  double min_safety() const {
    double m = std::numeric_limits<double>::infinity();
    for (const RunResult& r : runs) m = std::min(m, r.metrics.safety());
    return m;
  }
  std::array<double, 4> min_barrier() const {
    std::array<double, 4> m;
    m.fill(std::numeric_limits<double>::infinity());
    for (const RunResult& r : runs) {
      for (std::size_t i = 0; i < 4; ++i) m[i] = std::min(m[i], r.metrics.min_barrier[i]);
    }
    return m;
  }
  /// Over complete runs.
  MeanStd t_f() const { return over_complete([](const Metrics& m) { return m.t_f; }); }
  MeanStd energy() const { return over_complete([](const Metrics& m) { return m.energy; }); }
  double max_kkt_residual() const {
    double m = 0.0;
    for (const RunResult& r : runs) m = std::max(m, r.metrics.max_kkt_residual);
    return m;
  }
  std::size_t qp_solves() const {
    std::size_t n = 0;
    for (const RunResult& r : runs) n += static_cast<std::size_t>(r.metrics.qp_solves);
    return n;
  }

 private:
  template <class F>
  MeanStd over_complete(F f) const {
    std::vector<double> xs;
    for (const RunResult& r : runs) {
      if (r.metrics.outcome == Outcome::kComplete) xs.push_back(f(r.metrics));
    }
    return mean_std(xs);
  }
};

inline nlohmann::ordered_json report_json(const BatchReport& rep) {
  using json = nlohmann::ordered_json;
  const auto ms = [](const MeanStd& m) { return json{{"mean", m.mean}, {"std", m.std}, {"n", m.n}}; };
  json j;
  j["label"] = rep.label;
  j["config_hash"] = rep.config_hash;
  j["seeds"] = rep.seeds();
  json agg;
  agg["runs"] = rep.runs.size();
  agg["complete"] = rep.count(Outcome::kComplete);
  agg["abort"] = rep.count(Outcome::kAbort);
  agg["A-HDV"] = rep.count(MergeSide::kAhead);
  agg["B-HDV"] = rep.count(MergeSide::kBehind);
  agg["safety_min"] = rep.min_safety();
  agg["min_barrier"] = detail::barriers_json(rep.min_barrier());
  agg["violation_runs"] = rep.violations();
  agg["ch_violation_runs"] = rep.ch_violations();
  agg["fallback_runs"] = rep.runs_with_fallback();
  agg["t_f"] = ms(rep.t_f());
  agg["energy"] = ms(rep.energy());
  agg["qp_solves"] = rep.qp_solves();
  agg["max_kkt_residual"] = rep.max_kkt_residual();
  j["aggregate"] = agg;
  json rows = json::array();
  for (const RunResult& r : rep.runs) {
    json row = metrics_json(r.metrics);
    row["seed"] = r.seed;
    rows.push_back(row);
  }
  j["runs"] = rows;
  return j;
}

/// Called once per finished run, from a worker thread, with the run's index.
using RunSink = std::function<void(std::size_t, const TrajectoryLog&)>;

struct BatchOptions {
  unsigned threads{0};
  /// Sample stride for the logs passed to the sink (0 records none).
  int sample_stride{0};
  RunSink sink{};
};

/// Runs the scenario once per seed. Every other setting comes from `base`.
inline BatchReport run_batch(const Scenario& base, const std::vector<std::uint64_t>& seeds, std::string label,
                             const BatchOptions& opts = {}) {
  if (seeds.empty()) throw ConfigError("batch: at least one seed is required");
  BatchReport rep;
  rep.label = std::move(label);
  rep.config_hash = config_hash(base);
  rep.runs.resize(seeds.size());
  parallel_for(seeds.size(), opts.threads, [&](std::size_t i) {
    ScenarioConfig cfg = base.config;
    cfg.seed = seeds[i];
    RunOptions ro;
    ro.sample_stride = opts.sample_stride;
    const TrajectoryLog log = run_scenario(cfg, base.policy, ro);
    RunResult& r = rep.runs[i];
    r.seed = seeds[i];
    r.metrics = compute_metrics(log);
    for (const QpDiagnostic& q : log.qp) {
      if (q.record.status == QpStatus::kOptimal) {
        r.max_optimal_violation = std::max(r.max_optimal_violation, q.record.max_violation);
      }
    }
    if (opts.sink) opts.sink(i, log);
  });
  return rep;
}

/// The three controller configurations compared over paired seeds.
enum class CompareCase { kTimeKnown, kTimeUnknown, kEvent };

inline constexpr std::array<CompareCase, 3> kAllCases{CompareCase::kTimeKnown, CompareCase::kTimeUnknown,
                                                      CompareCase::kEvent};

inline std::string_view to_string(CompareCase c) {
  switch (c) {
    case CompareCase::kTimeKnown: return "case1_time_known";
    case CompareCase::kTimeUnknown: return "case2_time_unknown";
    default: return "case3_event";
  }
}

inline Scenario case_scenario(Scenario sc, CompareCase c) {
  sc.config.controller.mode = c == CompareCase::kEvent ? ControlMode::kEventDriven : ControlMode::kTimeDriven;
  sc.config.controller.hdv_known = c == CompareCase::kTimeKnown;
  return sc;
}

/// Human-study driver archetypes.
inline Scenario archetype_scenario(Scenario sc, PolicyKind kind) {
  if (kind != PolicyKind::kAggressive && kind != PolicyKind::kConservative && kind != PolicyKind::kHesitant) {
    throw ConfigError("archetype: expected aggressive, conservative or hesitant");
  }
  sc.policy.kind = kind;
  return sc;
}

}  // namespace mixedlane
