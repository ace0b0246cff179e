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

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixedlane/qp_solver.hpp"
#include "mixedlane/robust_bounds.hpp"
#include "mixedlane/safety_constraints.hpp"
#include "mixedlane/types.hpp"
#include "mixedlane/vehicle_models.hpp"

namespace mixedlane {

enum class ControlMode { kTimeDriven, kEventDriven };

/// How synchronization folds measured error rates into the adaptive terms.
enum class SyncRule {
  kIncremental,  // h += ė(t_k), which zeroes ė right after the update
  kCumulative,   // h += Σ_{i<=k} ė(t_i)
};

inline std::string_view to_string(ControlMode m) { return m == ControlMode::kTimeDriven ? "time" : "event"; }
inline std::string_view to_string(SyncRule r) { return r == SyncRule::kIncremental ? "incremental" : "cumulative"; }

struct ControllerConfig {
  ControlMode mode{ControlMode::kEventDriven};
  double delta{0.05};  // [s], time-driven update period
  BoundVectors bounds{};
  double epsilon{0.3};  // [m], lane-completion tolerance
  double t_final{15.0};  // [s], abort horizon
  /// Case 1: the controller uses the HDV's structural model and current control.
  bool hdv_known{false};
  SyncRule sync_rule{SyncRule::kIncremental};

  void validate() const {
    if (!(delta > 0.0)) throw ConfigError("controller.delta: must be positive");
    if (!(epsilon > 0.0)) throw ConfigError("controller.epsilon: must be positive");
    if (!(t_final > 0.0)) throw ConfigError("controller.t_final: must be positive");
    bounds.validate();
  }
};

/// Everything the controller needs to build and solve its QPs.
struct ControllerParams {
  ControllerConfig config{};
  BarrierParams barrier{};
  ClfParams clf{};
  LimitParams limits{};
  QpWeights weights{};
  ControlBounds control_bounds{};
  double wheelbase{kDefaultWheelbase};

  void validate() const {
    config.validate();
    barrier.validate();
    clf.validate();
    weights.validate();
    if (!(limits.v_min < limits.v_max)) throw ConfigError("speed_limits: v_min must be below v_max");
    if (!(limits.lane_width > 0.0)) throw ConfigError("lane_width: must be positive");
    if (!(wheelbase > 0.0)) throw ConfigError("wheelbase: must be positive");
    if (!(control_bounds.min.u <= control_bounds.max.u) || !(control_bounds.min.phi <= control_bounds.max.phi)) {
      throw ConfigError("control_bounds: min exceeds max");
    }
  }
};

enum class EventKind {
  kError,               // |e| reached w
  kErrorRate,           // |ė| reached ν
  kStateDrift,          // a state left its S_i box
  kPeriodic,            // time-driven tick or the initial solve
  kInfeasibleFallback,  // QP infeasible, braking fallback applied
  kTermination,
  kAbort,
};

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::kError: return "event1_error";
    case EventKind::kErrorRate: return "event2_error_rate";
    case EventKind::kStateDrift: return "event3_state_drift";
    case EventKind::kPeriodic: return "periodic";
    case EventKind::kInfeasibleFallback: return "infeasible_fallback";
    case EventKind::kTermination: return "termination";
    default: return "abort";
  }
}

/// The quantities the trigger rule watches at one micro-step. `states` holds the
/// measured states of 1, C and U and, in the HDV slot, the estimate x̄_H.
struct MonitorFrame {
  ErrorVector error{};
  ErrorRate error_rate{};
  std::array<VehicleState, 4> states{};
};

struct Trigger {
  EventKind kind{EventKind::kPeriodic};
  std::optional<Vehicle> vehicle;  // Event 3 only
  std::size_t component{0};        // 0..3 for (x, y, theta, v)
  double value{0.0};               // magnitude that reached the bound
  double previous{0.0};            // same magnitude one micro-step earlier
  double bound{0.0};
};

/// Vehicle order used to break ties between simultaneous Event-3 crossings.
inline constexpr std::array<Vehicle, 4> kTriggerVehicleOrder{Vehicle::kOne, Vehicle::kC, Vehicle::kU, Vehicle::kH};

/// First satisfied trigger condition at this micro-step, in the order Event 1,
/// Event 2, Event 3; components (x, y, θ, v); vehicles (1, C, U, H).
inline std::optional<Trigger> detect_trigger(const MonitorFrame& now, const MonitorFrame& prev,
                                             const std::array<VehicleState, 4>& anchor, const BoundVectors& b) {
  const auto reached = [](double value, double bound) { return std::isfinite(bound) && value >= bound; };
  for (std::size_t c = 0; c < 4; ++c) {
    if (reached(std::abs(now.error[c]), b.w[c])) {
      return Trigger{EventKind::kError, std::nullopt, c, std::abs(now.error[c]), std::abs(prev.error[c]), b.w[c]};
    }
  }
  for (std::size_t c = 0; c < 4; ++c) {
    if (reached(std::abs(now.error_rate[c]), b.nu[c])) {
      return Trigger{EventKind::kErrorRate, std::nullopt, c, std::abs(now.error_rate[c]),
                     std::abs(prev.error_rate[c]), b.nu[c]};
    }
  }
  for (Vehicle v : kTriggerVehicleOrder) {
    const std::size_t i = index(v);
    for (std::size_t c = 0; c < 4; ++c) {
      const double drift = std::abs(now.states[i][c] - anchor[i][c]);
      if (reached(drift, b.s[i][c])) {
        return Trigger{EventKind::kStateDrift, v, c, drift, std::abs(prev.states[i][c] - anchor[i][c]), b.s[i][c]};
      }
    }
  }
  return std::nullopt;
}

enum class Termination { kContinue, kComplete, kAbort };

inline Termination check_termination(double y_c, double t, double lane_width, const ControllerConfig& cfg) {
  if (std::abs(y_c - lane_width) <= cfg.epsilon) return Termination::kComplete;
  if (t >= cfg.t_final) return Termination::kAbort;
  return Termination::kContinue;
}

/// Inputs available to the controller at an update instant.
struct Snapshot {
  std::int64_t step{0};
  double t{0.0};
  std::array<VehicleState, 4> states{};
  /// Sensed HDV state derivative at this instant.
  StateRate hdv_rate{};
  /// HDV control, only read when the HDV model is known.
  ControlInput hdv_control{};
};

struct QpRecord {
  int pass{0};  // 1 nominal, 2 robust, 3 robust re-solve
  QpStatus status{QpStatus::kMaxIter};
  double kkt_residual{0.0};
  double max_violation{0.0};
  int iterations{0};
  double solve_time_s{0.0};
};

struct ControlDecision {
  ControlInput c{};
  ControlInput one{};
  bool fallback{false};
  bool sign_oscillation{false};
  std::vector<QpRecord> solves;
  /// Rows of the QP whose solution was applied.
  std::vector<ConstraintRow> rows;
  /// Adaptive state right after synchronization.
  AdaptiveTerms terms{};
  ErrorVector post_sync_error{};
  ErrorRate post_sync_error_rate{};
};

/// Nominal CBF and CLF rows at a snapshot. The HDV enters through the adaptive
/// estimate with the given e and ė, or through its known structure.
inline std::vector<ConstraintRow> build_nominal_rows(const std::array<VehicleState, 4>& states,
                                                     const VehicleState& est_hdv, const AdaptiveTerms& terms,
                                                     const ErrorVector& e, const ErrorRate& e_dot,
                                                     const ControlInput& hdv_control, bool hdv_known,
                                                     const ControllerParams& p) {
  std::vector<ConstraintRow> rows;
  rows.reserve(16);
  for (VehiclePair pair : kAllPairs) {
    PairInputs in;
    in.pair = pair;
    in.ego = states[index(ego_of(pair))];
    const Vehicle other = other_of(pair);
    if (other == Vehicle::kH) {
      if (hdv_known) {
        in.model = OtherModel::kKnownHdv;
        in.other = states[index(Vehicle::kH)];
        in.other_control = hdv_control;
      } else {
        in.model = OtherModel::kAdaptive;
        in.other = est_hdv;
        in.terms = terms;
        in.error = e;
        in.error_rate = e_dot;
      }
    } else {
      in.model = other == Vehicle::kC ? OtherModel::kControlled : OtherModel::kConstantSpeed;
      in.other = states[index(other)];
    }
    rows.push_back(cbf_row_pair(in, p.barrier));
  }
  const VehicleState& c = states[index(Vehicle::kC)];
  const VehicleState& one = states[index(Vehicle::kOne)];
  for (ConstraintRow& r : limit_cbf_rows(c, one, p.limits, p.barrier)) rows.push_back(std::move(r));
  for (ConstraintRow& r : clf_rows(c, one, p.clf)) rows.push_back(std::move(r));
  return rows;
}

/// Per-pair other-vehicle models matching build_nominal_rows.
inline std::array<RobustPairModel, 4> robust_pair_models(const AdaptiveTerms& terms, const ControlInput& hdv_control,
                                                         bool hdv_known) {
  std::array<RobustPairModel, 4> m{};
  for (VehiclePair pair : kAllPairs) {
    RobustPairModel& r = m[index(pair)];
    const Vehicle other = other_of(pair);
    if (other == Vehicle::kH) {
      r.model = hdv_known ? OtherModel::kKnownHdv : OtherModel::kAdaptive;
      r.terms = terms;
      r.other_control = hdv_control;
    } else {
      r.model = other == Vehicle::kC ? OtherModel::kControlled : OtherModel::kConstantSpeed;
    }
  }
  return m;
}

/// Smallest time for any drift component of 1, C or U to cover its s bound at
/// the initial rates, in micro-steps. Used for a configuration warning only.
inline double min_interevent_estimate(const std::array<VehicleState, 4>& states, const BoundVectors& b,
                                      double wheelbase, double micro_step) {
  double best = std::numeric_limits<double>::infinity();
  for (Vehicle v : {Vehicle::kOne, Vehicle::kC, Vehicle::kU}) {
    const StateRate r = cav_derivative(states[index(v)], {}, wheelbase);
    for (std::size_t c = 0; c < 3; ++c) {
      if (std::abs(r[c]) > 0.0) best = std::min(best, b.s[index(v)][c] / std::abs(r[c]));
    }
  }
  return best / micro_step;
}

/// Configuration warnings that do not prevent a run.
inline std::vector<std::string> config_warnings(const ControllerParams& p, const std::array<VehicleState, 4>& states,
                                                double micro_step) {
  std::vector<std::string> out;
  if (p.config.mode == ControlMode::kEventDriven) {
    const double steps = min_interevent_estimate(states, p.config.bounds, p.wheelbase, micro_step);
    if (steps < 5.0) {
      out.push_back("state-drift bounds imply about " + std::to_string(steps) +
                    " micro-steps between events; triggers will fire at micro-step rate");
    }
  }
  return out;
}

/// Time- and event-driven CAV controller with the adaptive HDV model it maintains.
class Controller {
 public:
  Controller(ControllerParams params, const VehicleState& hdv_initial) : p_(std::move(params)) {
    p_.validate();
    est_ = hdv_initial;
  }

  const ControllerParams& params() const { return p_; }
  const VehicleState& estimate() const { return est_; }
  const AdaptiveTerms& terms() const { return terms_; }
  const std::array<VehicleState, 4>& anchor() const { return anchor_; }
  ControlInput control_c() const { return held_c_; }
  ControlInput control_one() const { return held_one_; }

  ErrorVector error(const VehicleState& hdv) const { return measure_error(hdv, est_); }
  ErrorRate error_rate(const StateRate& sensed) const {
    return measure_error_rate(sensed, hdv_adaptive_derivative(est_, terms_, p_.wheelbase));
  }

  /// Advances x̄_H under the adaptive model between updates.
  void advance_estimate(double dt) {
    est_ = integrate_step(
        est_, [&](const VehicleState& s) { return hdv_adaptive_derivative(s, terms_, p_.wheelbase); }, dt);
  }

  /// Resets x̄_H to the measured HDV state, then folds the error rate measured
  /// at the reset state into h.
  void synchronize(const Snapshot& snap) {
    const VehicleState& hdv = snap.states[index(Vehicle::kH)];
    est_ = hdv;
    const ErrorRate measured = error_rate(snap.hdv_rate);
    if (p_.config.sync_rule == SyncRule::kIncremental) {
      const std::array<ErrorRate, 1> one{measured};
      terms_ = synchronize_adaptive_model(terms_, one, hdv).terms;
    } else {
      history_.add(measured);
      const std::array<ErrorRate, 1> folded{history_.sum()};
      terms_ = synchronize_adaptive_model(terms_, folded, hdv).terms;
    }
  }

  /// Installs externally decided controls and anchors (log replay).
  void hold(const Snapshot& snap, const ControlInput& c, const ControlInput& one) {
    held_c_ = c;
    held_one_ = one;
    anchor_ = snap.states;
    anchor_[index(Vehicle::kH)] = est_;
  }

  /// Synchronizes the adaptive model, builds and solves the QP(s), and latches
  /// the new anchors and held controls.
  ControlDecision control_step(const Snapshot& snap) {
    const VehicleState& hdv = snap.states[index(Vehicle::kH)];
    synchronize(snap);

    ControlDecision d;
    d.terms = terms_;
    d.post_sync_error = error(hdv);
    d.post_sync_error_rate = error_rate(snap.hdv_rate);

    const bool known = p_.config.hdv_known;
    std::vector<ConstraintRow> nominal = build_nominal_rows(snap.states, est_, terms_, d.post_sync_error,
                                                            d.post_sync_error_rate, snap.hdv_control, known, p_);

    std::optional<Eigen::VectorXd> z;
    if (p_.config.mode == ControlMode::kTimeDriven) {
      z = solve(nominal, 1, d);
      d.rows = std::move(nominal);
    } else {
      z = solve_robust(snap, nominal, d);
    }

    if (!z) {
      d.fallback = true;
      d.c = {p_.control_bounds.min.u, 0.0};
      d.one = {p_.control_bounds.min.u, 0.0};
    } else {
      d.c = {(*z)(kSlotUC), (*z)(kSlotPhiC)};
      d.one = {(*z)(kSlotU1), (*z)(kSlotPhi1)};
    }
    hold(snap, d.c, d.one);
    return d;
  }

 private:
  std::optional<Eigen::VectorXd> solve(const std::vector<ConstraintRow>& rows, int pass, ControlDecision& d) {
    const QpProblem qp = assemble_qp(rows, p_.weights, p_.control_bounds);
    const QpSolution s = solver_.solve(qp);
    d.solves.push_back({pass, s.status, s.kkt_residual, s.max_violation, s.iterations, s.solve_time_s});
    if (s.status != QpStatus::kOptimal) return std::nullopt;
    return s.z;
  }

  static bool same_signs(const Eigen::VectorXd& a, std::span<const double> signs) {
    for (std::size_t i = 0; i < kSlotDelta; ++i) {
      if ((a(static_cast<Eigen::Index>(i)) >= 0.0) != (signs[i] >= 0.0)) return false;
    }
    return true;
  }

  // Smallest margin of the robust rows rebuilt with z's own signs, evaluated at z.
  double consistent_margin(const Eigen::VectorXd& z, const std::vector<ConstraintRow>& nominal,
                           const RobustContext& ctx) const {
    const std::vector<double> zz(z.data(), z.data() + z.size());
    const auto rows = robustify_rows(nominal, ctx, zz);
    double m = std::numeric_limits<double>::infinity();
    for (const ConstraintRow& r : rows) {
      if (r.kind == RowKind::kCbf) m = std::min(m, r.margin(zz));
    }
    return m;
  }

  std::optional<Eigen::VectorXd> solve_robust(const Snapshot& snap, const std::vector<ConstraintRow>& nominal,
                                              ControlDecision& d) {
    const VehicleState& hdv_anchor = p_.config.hdv_known ? snap.states[index(Vehicle::kH)] : est_;
    const UncertaintyBox box = build_uncertainty_box(snap.states, hdv_anchor, p_.config.bounds, snap.t);
    RobustContext ctx;
    ctx.box = &box;
    ctx.params = p_.barrier;
    ctx.limits = p_.limits;
    ctx.pair_models = robust_pair_models(terms_, snap.hdv_control, p_.config.hdv_known);

    // Pass 1: nominal QP for the control signs.
    std::vector<double> signs(kDecisionSize, 0.0);
    if (auto z1 = solve(nominal, 1, d)) signs.assign(z1->data(), z1->data() + z1->size());

    // Pass 2: robust QP under those signs; one re-solve if the signs flip.
    std::vector<ConstraintRow> rows = robustify_rows(nominal, ctx, signs);
    auto z2 = solve(rows, 2, d);
    if (!z2) return std::nullopt;
    if (same_signs(*z2, signs)) {
      d.rows = std::move(rows);
      return z2;
    }
    std::vector<double> signs2(z2->data(), z2->data() + z2->size());
    std::vector<ConstraintRow> rows3 = robustify_rows(nominal, ctx, signs2);
    auto z3 = solve(rows3, 3, d);
    if (z3 && same_signs(*z3, signs2)) {
      d.rows = std::move(rows3);
      return z3;
    }
    d.sign_oscillation = true;
    if (!z3 || consistent_margin(*z2, nominal, ctx) >= consistent_margin(*z3, nominal, ctx)) {
      d.rows = std::move(rows);
      return z2;
    }
    d.rows = std::move(rows3);
    return z3;
  }

  ControllerParams p_;
  QpSolver solver_{};
  VehicleState est_{};
  AdaptiveTerms terms_{};
  ErrorRateAccumulator history_{};
  std::array<VehicleState, 4> anchor_{};
  ControlInput held_c_{};
  ControlInput held_one_{};
};

}  // namespace mixedlane
