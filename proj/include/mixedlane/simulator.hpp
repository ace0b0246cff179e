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
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mixedlane/controller.hpp"
#include "mixedlane/random.hpp"
#include "mixedlane/safety_constraints.hpp"
#include "mixedlane/types.hpp"
#include "mixedlane/vehicle_models.hpp"

namespace mixedlane {

enum class PolicyKind { kRandom, kAggressive, kConservative, kHesitant, kExternal };

inline std::string_view to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::kRandom: return "random";
    case PolicyKind::kAggressive: return "aggressive";
    case PolicyKind::kConservative: return "conservative";
    case PolicyKind::kHesitant: return "hesitant";
    default: return "external";
  }
}

inline std::optional<PolicyKind> policy_kind_from(std::string_view s) {
  for (PolicyKind k : {PolicyKind::kRandom, PolicyKind::kAggressive, PolicyKind::kConservative,
                       PolicyKind::kHesitant, PolicyKind::kExternal}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

/// One entry of an external (human) control schedule, effective from `step`.
struct ExternalCommand {
  std::int64_t step{0};
  bool deadman{false};  // true: revert to (0, lane-hold steering)
  ControlInput control{};
  friend bool operator==(const ExternalCommand&, const ExternalCommand&) = default;
};

struct HdvPolicyConfig {
  PolicyKind kind{PolicyKind::kRandom};
  double random_u{1.7};                            // [m/s^2], u ~ U[-random_u, random_u]
  double random_phi{0.2 * std::numbers::pi};       // [rad]
  double aggressive_accel{1.7};                    // accelerate toward v_max, refusing to yield
  double conservative_decel{-2.0};                 // yield to a merging C
  double conservative_proximity{30.0};             // [m]
  double conservative_merge_rate{0.1};             // [m/s], ẏ_C above this counts as merging
  double conservative_clear_headway{0.6};          // [s], C is ahead once x_C - x_H >= this * v_C
  double hesitant_accel{1.5};                      // alternating ±, sudden and inconsistent
  Interval hesitant_dwell{0.5, 1.5};               // [s]
  double lane_center{4.0};                         // [m]
  double lane_gain_y{0.5};
  double lane_gain_theta{1.0};
  double lane_phi_max{0.2 * std::numbers::pi};
  /// Human controls for kind == external, sorted by step.
  std::vector<ExternalCommand> schedule;

  void validate() const {
    if (!(random_u >= 0.0) || !(random_phi >= 0.0)) throw ConfigError("hdv_policy.random: ranges must be >= 0");
    if (!(conservative_clear_headway >= 0.0)) throw ConfigError("hdv_policy.conservative_clear_headway: must be >= 0");
    if (!(hesitant_dwell.lo > 0.0) || hesitant_dwell.lo > hesitant_dwell.hi) {
      throw ConfigError("hdv_policy.hesitant_dwell: need 0 < lo <= hi");
    }
    for (std::size_t i = 1; i < schedule.size(); ++i) {
      if (schedule[i].step < schedule[i - 1].step) throw ConfigError("hdv_policy.schedule: steps must be sorted");
    }
  }
};

/// Physical clamps applied to every HDV control.
struct HdvLimits {
  double u_max{7.0};
  double phi_max{std::numbers::pi / 4.0};
};

struct ScenarioConfig {
  /// Initial states indexed by Vehicle (1, C, H, U).
  std::array<VehicleState, 4> initial{{{50, 4, 0, 29}, {20, 0, 0, 25}, {10, 4, 0, 28}, {60, 0, 0, 20}}};
  double lane_width{4.0};
  double wheelbase{kDefaultWheelbase};
  double micro_step{kDefaultMicroStep};
  double v_min{15.0};
  double v_max{35.0};
  ControlBounds control_bounds{};
  double desired_speed{30.0};
  BarrierParams barrier{};
  std::array<double, 4> clf_rates{1.0, 1.0, 1.0, 1.0};
  QpWeights weights{};
  DisturbanceConfig disturbance{};
  ControllerConfig controller{};
  HdvLimits hdv_limits{};
  std::uint64_t seed{1};

  ControllerParams controller_params() const {
    ControllerParams p;
    p.config = controller;
    p.barrier = barrier;
    p.clf.rates = clf_rates;
    p.clf.desired_speed = desired_speed;
    p.clf.lane_width = lane_width;
    p.limits = {v_min, v_max, lane_width};
    p.weights = weights;
    p.control_bounds = control_bounds;
    p.wheelbase = wheelbase;
    return p;
  }

  void validate() const {
    if (!(micro_step > 0.0)) throw ConfigError("micro_step: must be positive");
    for (const VehicleState& s : initial) {
      if (!(s.v >= 0.0)) throw ConfigError("initial: speeds must be >= 0");
    }
    if (!(hdv_limits.u_max >= 0.0) || !(hdv_limits.phi_max >= 0.0)) throw ConfigError("hdv_limits: must be >= 0");
    disturbance.validate();
    controller_params().validate();
    const double ratio = controller.delta / micro_step;
    if (controller.mode == ControlMode::kTimeDriven && std::abs(ratio - std::round(ratio)) > 1e-9) {
      throw ConfigError("controller.delta: must be a multiple of micro_step");
    }
  }
};

/// Seed streams derived from the scenario seed.
inline constexpr std::uint64_t kDisturbanceStream = 1;
inline constexpr std::uint64_t kPolicyStream = 2;

/// What an HDV policy may observe.
struct PolicyView {
  std::int64_t step{0};
  double t{0.0};
  const std::array<VehicleState, 4>* states{nullptr};
  StateRate c_rate{};  // current rate of C under its held control
  bool controller_updated{false};  // the CAV controls were updated on the previous micro-step
};

/// Scripted or recorded HDV driver. Scripted drivers are evaluated every
/// micro-step; the random driver draws at step 0 and right after every
/// controller update.
class HdvPolicy {
 public:
  HdvPolicy(HdvPolicyConfig cfg, std::uint64_t seed, double micro_step, HdvLimits limits = {})
      : cfg_(std::move(cfg)), rng_(seed), dt_(micro_step), limits_(limits) {
    cfg_.validate();
  }

  const HdvPolicyConfig& config() const { return cfg_; }

  /// Appends a command to the external schedule.
  void push(const ExternalCommand& cmd) {
    if (!cfg_.schedule.empty() && cmd.step < cfg_.schedule.back().step) {
      throw ConfigError("hdv_policy.schedule: steps must be sorted");
    }
    cfg_.schedule.push_back(cmd);
  }

  ControlInput lane_hold(const VehicleState& h) const {
    const double phi = -cfg_.lane_gain_y * (h.y - cfg_.lane_center) - cfg_.lane_gain_theta * h.theta;
    return {0.0, std::clamp(phi, -cfg_.lane_phi_max, cfg_.lane_phi_max)};
  }

  ControlInput clamp(ControlInput c) const {
    return {std::clamp(c.u, -limits_.u_max, limits_.u_max), std::clamp(c.phi, -limits_.phi_max, limits_.phi_max)};
  }

  /// Control for this micro-step, clamped to the physical limits.
  ControlInput control(const PolicyView& view) {
    const VehicleState& h = (*view.states)[index(Vehicle::kH)];
    const VehicleState& c = (*view.states)[index(Vehicle::kC)];
    ControlInput out{};
    switch (cfg_.kind) {
      case PolicyKind::kRandom:
        if (view.step == 0 || view.controller_updated) {
          held_.u = rng_.uniform(-cfg_.random_u, cfg_.random_u);
          held_.phi = rng_.uniform(-cfg_.random_phi, cfg_.random_phi);
        }
        out = held_;
        break;
      case PolicyKind::kAggressive:
        out = lane_hold(h);
        out.u = h.v < 35.0 ? cfg_.aggressive_accel : 0.0;
        break;
      case PolicyKind::kConservative: {
        out = lane_hold(h);
        const bool merging = view.c_rate.y > cfg_.conservative_merge_rate;
        const bool clear = c.x - h.x >= cfg_.conservative_clear_headway * c.v;
        if (!yielding_ && !clear && merging && std::abs(c.x - h.x) < cfg_.conservative_proximity) yielding_ = true;
        if (yielding_ && clear) yielding_ = false;
        out.u = yielding_ ? cfg_.conservative_decel : 0.0;
        break;
      }
      case PolicyKind::kHesitant:
        out = lane_hold(h);
        if (view.step >= next_switch_) {
          sign_ = view.step == 0 ? (rng_.canonical() < 0.5 ? 1.0 : -1.0) : -sign_;
          const double dwell = rng_.uniform(cfg_.hesitant_dwell.lo, cfg_.hesitant_dwell.hi);
          next_switch_ = view.step + std::max<std::int64_t>(1, std::llround(dwell / dt_));
        }
        out.u = sign_ * cfg_.hesitant_accel;
        break;
      case PolicyKind::kExternal:
        while (next_cmd_ < cfg_.schedule.size() && cfg_.schedule[next_cmd_].step <= view.step) {
          current_ = cfg_.schedule[next_cmd_++];
          have_cmd_ = true;
        }
        out = (!have_cmd_ || current_.deadman) ? lane_hold(h) : current_.control;
        break;
    }
    return clamp(out);
  }

 private:
  HdvPolicyConfig cfg_;
  Rng rng_;
  double dt_;
  HdvLimits limits_;
  ControlInput held_{};
  bool yielding_{false};
  double sign_{1.0};
  std::int64_t next_switch_{0};
  std::size_t next_cmd_{0};
  ExternalCommand current_{};
  bool have_cmd_{false};
};

enum class Outcome { kRunning, kComplete, kAbort };

inline std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::kRunning: return "running";
    case Outcome::kComplete: return "complete";
    default: return "abort";
  }
}

struct EventRecord {
  std::int64_t step{0};
  double t{0.0};
  EventKind kind{EventKind::kPeriodic};
  /// What caused the update; equals kind unless the update fell back.
  EventKind cause{EventKind::kPeriodic};
  std::optional<Vehicle> vehicle;
  std::size_t component{0};
  double value{0.0};
  double previous{0.0};
  double bound{0.0};
  ErrorVector post_sync_error{};
  ControlInput control_c{};
  ControlInput control_one{};
  bool sign_oscillation{false};
};

/// Held CAV controls from `step` until the next record.
struct ControlRecord {
  std::int64_t step{0};
  ControlInput c{};
  ControlInput one{};
  friend bool operator==(const ControlRecord&, const ControlRecord&) = default;
};

struct QpDiagnostic {
  std::int64_t step{0};
  QpRecord record{};
};

/// World state at one micro-step, before integration.
struct Sample {
  std::int64_t step{0};
  double t{0.0};
  std::array<VehicleState, 4> states{};
  VehicleState est_hdv{};
  ControlInput control_c{};
  ControlInput control_one{};
  ControlInput control_h{};
  std::array<double, 4> barriers{};
  ErrorVector error{};
  ErrorRate error_rate{};
};

inline std::array<double, 4> barrier_values(const std::array<VehicleState, 4>& s, const BarrierParams& p) {
  std::array<double, 4> out{};
  for (VehiclePair pair : kAllPairs) {
    out[index(pair)] = barrier_value(pair, s[index(ego_of(pair))], s[index(other_of(pair))], p);
  }
  return out;
}

struct TrajectoryLog {
  ScenarioConfig config{};
  HdvPolicyConfig policy{};
  std::vector<Sample> samples;
  std::vector<EventRecord> events;
  std::vector<ControlRecord> controls;
  std::vector<QpDiagnostic> qp;
  /// HDV controls applied at each micro-step where they changed.
  std::vector<ExternalCommand> hdv_controls;
  std::vector<std::string> warnings;
  /// Running minimum of each barrier over every micro-step.
  std::array<double, 4> barrier_min{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
                                    std::numeric_limits<double>::infinity(),
                                    std::numeric_limits<double>::infinity()};
  std::array<VehicleState, 4> final_states{};
  std::int64_t final_step{0};
  Outcome outcome{Outcome::kRunning};
  double t_f{0.0};
};

struct RunOptions {
  /// Keep every n-th micro-step sample (0 keeps none; the final sample is always kept when n > 0).
  int sample_stride{1};
  /// Replay: apply these CAV controls at their steps instead of solving QPs.
  const std::vector<ControlRecord>* replay{nullptr};
};

/// One simulation run, advanced one micro-step at a time.
class World {
 public:
  World(const ScenarioConfig& cfg, const HdvPolicyConfig& policy, RunOptions opts = {})
      : cfg_(validated(cfg)),
        opts_(opts),
        controller_(cfg_.controller_params(), cfg_.initial[index(Vehicle::kH)]),
        sampler_(disturbance_config(cfg_)),
        policy_(policy, Rng::derive(cfg_.seed, kPolicyStream), cfg_.micro_step, cfg_.hdv_limits),
        states_(cfg_.initial) {
    log_.config = cfg_;
    log_.policy = policy;
    log_.warnings = config_warnings(controller_.params(), states_, cfg_.micro_step);
    delta_steps_ = std::max<std::int64_t>(1, std::llround(cfg_.controller.delta / cfg_.micro_step));
  }

  bool done() const { return log_.outcome != Outcome::kRunning; }
  std::int64_t step_index() const { return step_; }
  double time() const { return static_cast<double>(step_) * cfg_.micro_step; }
  const std::array<VehicleState, 4>& states() const { return states_; }
  const Controller& controller() const { return controller_; }
  const TrajectoryLog& log() const { return log_; }
  TrajectoryLog take_log() { return std::move(log_); }
  const ScenarioConfig& config() const { return cfg_; }
  ControlInput hdv_control() const { return hdv_control_; }
  const HdvPolicy& policy() const { return policy_; }

  /// Installs a human command from the next micro-step on (external policy).
  void push_hdv_command(ExternalCommand cmd) {
    cmd.step = step_;
    policy_.push(cmd);
  }

  /// Advances one micro-step. No-op once the run has ended.
  void step() {
    if (done()) return;
    const std::int64_t n = step_;
    const double t = time();
    const DisturbanceSample dist = sampler_.sample();

    const StateRate c_rate = cav_derivative(states_[index(Vehicle::kC)], controller_.control_c(), cfg_.wheelbase);
    const ControlInput u_h = policy_.control({n, t, &states_, c_rate, updated_last_});
    updated_last_ = false;
    if (log_.hdv_controls.empty() || log_.hdv_controls.back().control != u_h) {
      log_.hdv_controls.push_back({n, false, u_h});
    }
    hdv_control_ = u_h;

    const VehicleState& hdv = states_[index(Vehicle::kH)];
    const StateRate sensed = hdv_true_derivative(hdv, u_h, cfg_.wheelbase, dist);
    MonitorFrame frame = monitor(sensed);

    const Termination term = check_termination(states_[index(Vehicle::kC)].y, t, cfg_.lane_width, cfg_.controller);
    if (term != Termination::kContinue) {
      finish(term == Termination::kComplete ? Outcome::kComplete : Outcome::kAbort, frame);
      return;
    }

    update_controls(n, t, sensed, u_h, frame);
    record(n, t, frame, u_h, /*force=*/false);
    prev_frame_ = frame;

    // Integrate all vehicles and the estimate over [t, t + dt).
    const double dt = cfg_.micro_step;
    const double lw = cfg_.wheelbase;
    const ControlInput uc = controller_.control_c();
    const ControlInput u1 = controller_.control_one();
    auto& s = states_;
    s[index(Vehicle::kC)] = integrate_step(
        s[index(Vehicle::kC)], [&](const VehicleState& x) { return cav_derivative(x, uc, lw); }, dt);
    s[index(Vehicle::kOne)] = integrate_step(
        s[index(Vehicle::kOne)], [&](const VehicleState& x) { return cav_derivative(x, u1, lw); }, dt);
    s[index(Vehicle::kH)] = integrate_step(
        s[index(Vehicle::kH)], [&](const VehicleState& x) { return hdv_true_derivative(x, u_h, lw, dist); }, dt);
    s[index(Vehicle::kU)] = integrate_step(
        s[index(Vehicle::kU)], [&](const VehicleState& x) { return cav_derivative(x, {}, lw); }, dt);
    for (VehicleState& v : s) v.v = std::max(0.0, v.v);
    controller_.advance_estimate(dt);
    ++step_;
  }

  /// Runs to completion.
  void run() {
    while (!done()) step();
  }

 private:
  static const ScenarioConfig& validated(const ScenarioConfig& cfg) {
    cfg.validate();
    return cfg;
  }
  static DisturbanceConfig disturbance_config(const ScenarioConfig& cfg) {
    DisturbanceConfig d = cfg.disturbance;
    d.seed = Rng::derive(cfg.seed, kDisturbanceStream);
    return d;
  }

  MonitorFrame monitor(const StateRate& sensed) const {
    MonitorFrame f;
    f.error = controller_.error(states_[index(Vehicle::kH)]);
    f.error_rate = controller_.error_rate(sensed);
    f.states = states_;
    f.states[index(Vehicle::kH)] = controller_.estimate();
    return f;
  }

  void update_controls(std::int64_t n, double t, const StateRate& sensed, const ControlInput& u_h,
                       MonitorFrame& frame) {
    const Snapshot snap{n, t, states_, sensed, u_h};
    if (opts_.replay != nullptr) {
      const auto& r = *opts_.replay;
      if (replay_next_ < r.size() && r[replay_next_].step == n) {
        controller_.synchronize(snap);
        controller_.hold(snap, r[replay_next_].c, r[replay_next_].one);
        log_.controls.push_back(r[replay_next_]);
        ++replay_next_;
        updated_last_ = true;
        frame = monitor(sensed);
      }
      return;
    }

    std::optional<Trigger> trig;
    bool update = false;
    if (cfg_.controller.mode == ControlMode::kTimeDriven) {
      update = n % delta_steps_ == 0;
    } else if (n == 0) {
      update = true;
    } else {
      trig = detect_trigger(frame, prev_frame_, controller_.anchor(), cfg_.controller.bounds);
      update = trig.has_value();
    }
    if (!update) return;
    updated_last_ = true;

    const ControlDecision d = controller_.control_step(snap);
    EventRecord ev;
    ev.step = n;
    ev.t = t;
    ev.cause = trig ? trig->kind : EventKind::kPeriodic;
    ev.kind = d.fallback ? EventKind::kInfeasibleFallback : ev.cause;
    if (trig) {
      ev.vehicle = trig->vehicle;
      ev.component = trig->component;
      ev.value = trig->value;
      ev.previous = trig->previous;
      ev.bound = trig->bound;
    }
    frame = monitor(sensed);
    ev.post_sync_error = frame.error;
    ev.control_c = d.c;
    ev.control_one = d.one;
    ev.sign_oscillation = d.sign_oscillation;
    log_.events.push_back(ev);
    log_.controls.push_back({n, d.c, d.one});
    for (const QpRecord& q : d.solves) log_.qp.push_back({n, q});
  }

  void record(std::int64_t n, double t, const MonitorFrame& frame, const ControlInput& u_h, bool force) {
    const auto b = barrier_values(states_, cfg_.barrier);
    for (std::size_t i = 0; i < 4; ++i) log_.barrier_min[i] = std::min(log_.barrier_min[i], b[i]);
    const int stride = opts_.sample_stride;
    if (stride <= 0 || (!force && n % stride != 0)) return;
    Sample s;
    s.step = n;
    s.t = t;
    s.states = states_;
    s.est_hdv = controller_.estimate();
    s.control_c = controller_.control_c();
    s.control_one = controller_.control_one();
    s.control_h = u_h;
    s.barriers = b;
    s.error = frame.error;
    s.error_rate = frame.error_rate;
    log_.samples.push_back(s);
  }

  void finish(Outcome outcome, const MonitorFrame& frame) {
    const std::int64_t n = step_;
    const double t = time();
    record(n, t, frame, hdv_control_, /*force=*/true);
    EventRecord ev;
    ev.step = n;
    ev.t = t;
    ev.kind = ev.cause = outcome == Outcome::kComplete ? EventKind::kTermination : EventKind::kAbort;
    ev.control_c = controller_.control_c();
    ev.control_one = controller_.control_one();
    log_.events.push_back(ev);
    log_.outcome = outcome;
    log_.t_f = t;
    log_.final_step = n;
    log_.final_states = states_;
  }

  ScenarioConfig cfg_;
  RunOptions opts_;
  Controller controller_;
  DisturbanceSampler sampler_;
  HdvPolicy policy_;
  std::array<VehicleState, 4> states_;
  std::int64_t step_{0};
  std::int64_t delta_steps_{50};
  MonitorFrame prev_frame_{};
  bool updated_last_{false};
  ControlInput hdv_control_{};
  std::size_t replay_next_{0};
  TrajectoryLog log_{};
};

inline TrajectoryLog run_scenario(const ScenarioConfig& cfg, const HdvPolicyConfig& policy, RunOptions opts = {}) {
  World w(cfg, policy, opts);
  w.run();
  return w.take_log();
}

/// Re-runs a logged scenario applying its recorded CAV controls.
inline TrajectoryLog replay_controls(const TrajectoryLog& log, RunOptions opts = {}) {
  opts.replay = &log.controls;
  return run_scenario(log.config, log.policy, opts);
}

enum class MergeSide { kAhead, kBehind };

inline std::string_view to_string(MergeSide m) { return m == MergeSide::kAhead ? "A-HDV" : "B-HDV"; }

struct Metrics {
  Outcome outcome{Outcome::kRunning};
  std::array<double, 4> min_barrier{};
  double t_f{0.0};
  double energy{0.0};
  std::optional<MergeSide> merge_side;
  int trigger_count{0};
  int control_updates{0};
  int fallback_count{0};
  int sign_oscillations{0};
  int qp_solves{0};
  double max_kkt_residual{0.0};
  double mean_solve_time_s{0.0};
  double max_solve_time_s{0.0};

  double safety() const { return min_barrier[index(VehiclePair::kCH)]; }
  double min_over_pairs() const { return *std::min_element(min_barrier.begin(), min_barrier.end()); }
};

inline bool is_trigger(EventKind k) {
  return k == EventKind::kError || k == EventKind::kErrorRate || k == EventKind::kStateDrift;
}

inline Metrics compute_metrics(const TrajectoryLog& log) {
  Metrics m;
  m.outcome = log.outcome;
  m.t_f = log.t_f;
  m.min_barrier = log.barrier_min;
  for (const Sample& s : log.samples) {
    for (std::size_t i = 0; i < 4; ++i) m.min_barrier[i] = std::min(m.min_barrier[i], s.barriers[i]);
  }
  const double dt = log.config.micro_step;
  for (std::size_t i = 0; i < log.controls.size(); ++i) {
    const std::int64_t end = i + 1 < log.controls.size() ? log.controls[i + 1].step : log.final_step;
    const double u = log.controls[i].c.u;
    m.energy += u * u * static_cast<double>(std::max<std::int64_t>(0, end - log.controls[i].step)) * dt;
  }
  if (log.outcome == Outcome::kComplete) {
    const double xc = log.final_states[index(Vehicle::kC)].x;
    const double xh = log.final_states[index(Vehicle::kH)].x;
    m.merge_side = xc > xh ? MergeSide::kAhead : MergeSide::kBehind;
  }
  for (const EventRecord& e : log.events) {
    if (e.kind == EventKind::kTermination || e.kind == EventKind::kAbort) continue;
    ++m.control_updates;
    if (is_trigger(e.cause)) ++m.trigger_count;
    if (e.kind == EventKind::kInfeasibleFallback) ++m.fallback_count;
    if (e.sign_oscillation) ++m.sign_oscillations;
  }
  double total = 0.0;
  for (const QpDiagnostic& q : log.qp) {
    ++m.qp_solves;
    total += q.record.solve_time_s;
    m.max_solve_time_s = std::max(m.max_solve_time_s, q.record.solve_time_s);
    if (q.record.status == QpStatus::kOptimal) m.max_kkt_residual = std::max(m.max_kkt_residual, q.record.kkt_residual);
  }
  if (m.qp_solves > 0) m.mean_solve_time_s = total / m.qp_solves;
  return m;
}

}  // namespace mixedlane
