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
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixedlane/qp_solver.hpp"
#include "mixedlane/types.hpp"
#include "mixedlane/vehicle_models.hpp"

namespace mixedlane {

/// Ordered vehicle pairs with an ellipsoidal separation constraint. The first
/// vehicle of each pair (the ego) carries the speed-scaled ellipse.
enum class VehiclePair : std::size_t { kCH = 0, k1C = 1, k1H = 2, kCU = 3 };
inline constexpr std::array<VehiclePair, 4> kAllPairs{VehiclePair::kCH, VehiclePair::k1C, VehiclePair::k1H,
                                                      VehiclePair::kCU};

constexpr std::size_t index(VehiclePair p) { return static_cast<std::size_t>(p); }

constexpr Vehicle ego_of(VehiclePair p) {
  return (p == VehiclePair::kCH || p == VehiclePair::kCU) ? Vehicle::kC : Vehicle::kOne;
}
constexpr Vehicle other_of(VehiclePair p) {
  switch (p) {
    case VehiclePair::kCH: return Vehicle::kH;
    case VehiclePair::k1C: return Vehicle::kC;
    case VehiclePair::k1H: return Vehicle::kH;
    default: return Vehicle::kU;
  }
}
constexpr std::string_view pair_name(VehiclePair p) {
  switch (p) {
    case VehiclePair::kCH: return "CH";
    case VehiclePair::k1C: return "1C";
    case VehiclePair::k1H: return "1H";
    default: return "CU";
  }
}

// Decision vector layout shared by every QP: [u_C, φ_C, u_1, φ_1, δ_1..δ_4].
inline constexpr std::size_t kDecisionSize = 8;
inline constexpr std::size_t kSlotUC = 0;
inline constexpr std::size_t kSlotPhiC = 1;
inline constexpr std::size_t kSlotU1 = 2;
inline constexpr std::size_t kSlotPhi1 = 3;
inline constexpr std::size_t kSlotDelta = 4;

/// Acceleration slot of a controlled vehicle (C or 1).
constexpr std::size_t accel_slot(Vehicle v) { return v == Vehicle::kC ? kSlotUC : kSlotU1; }
constexpr std::size_t steer_slot(Vehicle v) { return v == Vehicle::kC ? kSlotPhiC : kSlotPhi1; }
constexpr bool is_cav(Vehicle v) { return v == Vehicle::kC || v == Vehicle::kOne; }

struct Ellipse {
  double a{0.6};  // [s], longitudinal semi-axis per unit speed
  double b{0.1};  // [s], lateral semi-axis per unit speed
};

struct BarrierParams {
  Ellipse c{};
  Ellipse one{};
  /// Linear class-K gains, one per vehicle pair.
  std::array<double, 4> pair_gain{1.0, 1.0, 1.0, 1.0};
  double speed_gain{1.0};
  double lateral_gain{1.0};

  const Ellipse& ellipse_of(Vehicle ego) const { return ego == Vehicle::kC ? c : one; }
  double gain(VehiclePair p) const { return pair_gain[index(p)]; }

  void validate() const {
    for (const Ellipse& e : {c, one}) {
      if (!(e.a > 0.0) || !(e.b > 0.0)) throw ConfigError("barrier: ellipse weights must be positive");
    }
    for (double k : pair_gain) {
      if (!(k > 0.0)) throw ConfigError("barrier.pair_gain: gains must be positive");
    }
    if (!(speed_gain > 0.0) || !(lateral_gain > 0.0)) throw ConfigError("barrier: gains must be positive");
  }
};

struct ClfParams {
  std::array<double, 4> rates{1.0, 1.0, 1.0, 1.0};  // m_1..m_4
  double desired_speed{30.0};                        // v_d
  double lane_width{4.0};                            // l

  void validate() const {
    for (double m : rates) {
      if (!(m > 0.0)) throw ConfigError("clf.rates: must be positive");
    }
    if (!(lane_width > 0.0)) throw ConfigError("clf.lane_width: must be positive");
  }
};

struct QpWeights {
  double alpha_uC{1.0};
  double alpha_u1{1.0};
  /// Weight on φ² relative to α; the objective penalizes the full control vector.
  double steer_factor{1.0};
  std::array<double, 4> slack{1.0, 1.0, 100.0, 1.0};  // p_1..p_4

  void validate() const {
    if (alpha_uC < 0.0 || alpha_u1 < 0.0 || steer_factor < 0.0) throw ConfigError("qp_weights: negative weight");
    for (double p : slack) {
      if (p < 0.0) throw ConfigError("qp_weights.slack: negative weight");
    }
  }
};

struct ControlBounds {
  ControlInput min{-7.0, -std::numbers::pi / 4.0};
  ControlInput max{3.3, std::numbers::pi / 4.0};
};

struct LimitParams {
  double v_min{15.0};
  double v_max{35.0};
  double lane_width{4.0};
};

enum class RowKind { kCbf, kClf };

/// What a row constrains; used to rebuild it over an uncertainty box.
enum class RowSource { kPair, kSpeedMin, kSpeedMax, kLateralMin, kLateralMax, kClf };

/// One affine-in-decision inequality. CBF rows assert c_f + c_g·z >= 0; CLF rows
/// assert c_f + c_g·z <= 0 with their slack carried in c_g as a -1 entry.
struct ConstraintRow {
  RowKind kind{RowKind::kCbf};
  RowSource source{RowSource::kPair};
  VehiclePair pair{VehiclePair::kCH};
  Vehicle vehicle{Vehicle::kC};
  double c_f{0.0};
  std::vector<double> c_g = std::vector<double>(kDecisionSize, 0.0);
  std::string tag;

  double evaluate(std::span<const double> z) const {
    double s = c_f;
    for (std::size_t i = 0; i < c_g.size() && i < z.size(); ++i) s += c_g[i] * z[i];
    return s;
  }
  /// Signed margin: >= 0 when the row is satisfied regardless of sense.
  double margin(std::span<const double> z) const {
    const double s = evaluate(z);
    return kind == RowKind::kCbf ? s : -s;
  }
};

/// Barrier value Δx²/a² + Δy²/b² - v_ego² between the ego and other of a pair.
inline double barrier_value(VehiclePair pair, const VehicleState& ego, const VehicleState& other,
                            const BarrierParams& params) {
  const Ellipse& el = params.ellipse_of(ego_of(pair));
  const double dx = ego.x - other.x;
  const double dy = ego.y - other.y;
  return dx * dx / (el.a * el.a) + dy * dy / (el.b * el.b) - ego.v * ego.v;
}

/// How the controller models the second vehicle of a pair.
enum class OtherModel {
  kControlled,     // the other CAV; its steering enters the joint decision vector
  kConstantSpeed,  // U: drift only
  kAdaptive,       // H through the adaptive estimate plus measured e, ė
  kKnownHdv,       // H through its structural model with nominal disturbances
};

struct PairInputs {
  VehiclePair pair{VehiclePair::kCH};
  VehicleState ego{};
  /// Measured state, or the adaptive estimate x̄_H when model == kAdaptive.
  VehicleState other{};
  OtherModel model{OtherModel::kAdaptive};
  AdaptiveTerms terms{};
  ErrorVector error{};
  ErrorRate error_rate{};
  /// HDV control, only read by kKnownHdv.
  ControlInput other_control{};
};

namespace detail {

/// Relative position and drift velocity (ego minus other) plus everything the
/// Lie derivatives need.
struct PairKinematics {
  double dx, dy;    // ego - other position
  double dvx, dvy;  // ego drift - other drift
  double ego_v, ego_theta;
  double other_v, other_theta;  // only meaningful for a controlled other
};

inline PairKinematics pair_kinematics(const PairInputs& in) {
  const VehicleState& e = in.ego;
  const VehicleState& o = in.other;
  double ox = o.x, oy = o.y;
  double ovx = o.v * std::cos(o.theta);
  double ovy = o.v * std::sin(o.theta);
  switch (in.model) {
    case OtherModel::kAdaptive:
      ox += in.error.x;
      oy += in.error.y;
      ovx += in.terms.x + in.error_rate.x;
      ovy += in.terms.y + in.error_rate.y;
      break;
    case OtherModel::kKnownHdv:
      ovx -= o.v * std::sin(o.theta) * in.other_control.phi;
      ovy += o.v * std::cos(o.theta) * in.other_control.phi;
      break;
    default:
      break;
  }
  return {e.x - ox, e.y - oy, e.v * std::cos(e.theta) - ovx, e.v * std::sin(e.theta) - ovy,
          e.v, e.theta, o.v, o.theta};
}

/// L_f b + k b for the given kinematics.
inline double pair_drift_term(const PairKinematics& k, const Ellipse& el, double gain) {
  const double ia2 = 1.0 / (el.a * el.a);
  const double ib2 = 1.0 / (el.b * el.b);
  const double lf = 2.0 * k.dx * ia2 * k.dvx + 2.0 * k.dy * ib2 * k.dvy;
  const double b = k.dx * k.dx * ia2 + k.dy * k.dy * ib2 - k.ego_v * k.ego_v;
  return lf + gain * b;
}

inline double ego_steer_coeff(double dx, double dy, double v, double theta, const Ellipse& el) {
  return 2.0 * v * (-dx / (el.a * el.a) * std::sin(theta) + dy / (el.b * el.b) * std::cos(theta));
}

inline double other_steer_coeff(double dx, double dy, double v, double theta, const Ellipse& el) {
  return 2.0 * v * (dx / (el.a * el.a) * std::sin(theta) - dy / (el.b * el.b) * std::cos(theta));
}

}  // namespace detail

/// CBF row L_f b + k b + L_g b·z >= 0 for one vehicle pair.
inline ConstraintRow cbf_row_pair(const PairInputs& in, const BarrierParams& params) {
  const Vehicle ego = ego_of(in.pair);
  const Ellipse& el = params.ellipse_of(ego);
  const detail::PairKinematics k = detail::pair_kinematics(in);

  ConstraintRow row;
  row.kind = RowKind::kCbf;
  row.source = RowSource::kPair;
  row.pair = in.pair;
  row.vehicle = ego;
  row.tag = "pair:" + std::string(pair_name(in.pair));
  row.c_f = detail::pair_drift_term(k, el, params.gain(in.pair));
  row.c_g[accel_slot(ego)] = -2.0 * k.ego_v;
  row.c_g[steer_slot(ego)] = detail::ego_steer_coeff(k.dx, k.dy, k.ego_v, k.ego_theta, el);
  if (in.model == OtherModel::kControlled) {
    const Vehicle other = other_of(in.pair);
    row.c_g[steer_slot(other)] = detail::other_steer_coeff(k.dx, k.dy, k.other_v, k.other_theta, el);
  }
  return row;
}

/// Speed and lane-band CBF rows for both CAVs, in the order
/// v >= v_min, v <= v_max, y >= -l/2, y <= 3l/2 per vehicle (C first).
inline std::vector<ConstraintRow> limit_cbf_rows(const VehicleState& c, const VehicleState& one,
                                                 const LimitParams& limits, const BarrierParams& params) {
  std::vector<ConstraintRow> rows;
  rows.reserve(8);
  const double l = limits.lane_width;
  for (Vehicle veh : {Vehicle::kC, Vehicle::kOne}) {
    const VehicleState& s = veh == Vehicle::kC ? c : one;
    const std::string name(vehicle_name(veh));
    const double ks = params.speed_gain;
    const double kl = params.lateral_gain;
    const double vy = s.v * std::sin(s.theta);
    const double gy = s.v * std::cos(s.theta);

    ConstraintRow vmin;
    vmin.source = RowSource::kSpeedMin;
    vmin.vehicle = veh;
    vmin.tag = "speed_min:" + name;
    vmin.c_f = ks * (s.v - limits.v_min);
    vmin.c_g[accel_slot(veh)] = 1.0;
    rows.push_back(std::move(vmin));

    ConstraintRow vmax;
    vmax.source = RowSource::kSpeedMax;
    vmax.vehicle = veh;
    vmax.tag = "speed_max:" + name;
    vmax.c_f = ks * (limits.v_max - s.v);
    vmax.c_g[accel_slot(veh)] = -1.0;
    rows.push_back(std::move(vmax));

    ConstraintRow ylo;
    ylo.source = RowSource::kLateralMin;
    ylo.vehicle = veh;
    ylo.tag = "lateral_min:" + name;
    ylo.c_f = vy + kl * (s.y + 0.5 * l);
    ylo.c_g[steer_slot(veh)] = gy;
    rows.push_back(std::move(ylo));

    ConstraintRow yhi;
    yhi.source = RowSource::kLateralMax;
    yhi.vehicle = veh;
    yhi.tag = "lateral_max:" + name;
    yhi.c_f = -vy + kl * (1.5 * l - s.y);
    yhi.c_g[steer_slot(veh)] = -gy;
    rows.push_back(std::move(yhi));
  }
  return rows;
}

/// Soft tracking rows: speed toward v_d for C and 1, lateral position toward l for C and 1.
inline std::vector<ConstraintRow> clf_rows(const VehicleState& c, const VehicleState& one, const ClfParams& p) {
  std::vector<ConstraintRow> rows;
  rows.reserve(4);
  const auto speed_row = [&](const VehicleState& s, Vehicle veh, std::size_t j) {
    ConstraintRow r;
    r.kind = RowKind::kClf;
    r.source = RowSource::kClf;
    r.vehicle = veh;
    r.tag = "clf_speed:" + std::string(vehicle_name(veh));
    const double dv = s.v - p.desired_speed;
    r.c_f = p.rates[j] * dv * dv;
    r.c_g[accel_slot(veh)] = 2.0 * dv;
    r.c_g[kSlotDelta + j] = -1.0;
    return r;
  };
  const auto lateral_row = [&](const VehicleState& s, Vehicle veh, std::size_t j) {
    ConstraintRow r;
    r.kind = RowKind::kClf;
    r.source = RowSource::kClf;
    r.vehicle = veh;
    r.tag = "clf_lateral:" + std::string(vehicle_name(veh));
    const double dy = s.y - p.lane_width;
    r.c_f = 2.0 * dy * s.v * std::sin(s.theta) + p.rates[j] * dy * dy;
    r.c_g[steer_slot(veh)] = 2.0 * dy * s.v * std::cos(s.theta);
    r.c_g[kSlotDelta + j] = -1.0;
    return r;
  };
  rows.push_back(speed_row(c, Vehicle::kC, 0));
  rows.push_back(speed_row(one, Vehicle::kOne, 1));
  rows.push_back(lateral_row(c, Vehicle::kC, 2));
  rows.push_back(lateral_row(one, Vehicle::kOne, 3));
  return rows;
}

/// Builds min Σ α_i (u_i² + s φ_i²) + Σ p_j δ_j² subject to the rows, the control
/// box and δ >= 0. Rows are rescaled to unit max-coefficient; feasible sets are unchanged.
inline QpProblem assemble_qp(std::span<const ConstraintRow> rows, const QpWeights& w, const ControlBounds& bounds) {
  const std::size_t n = kDecisionSize;
  for (const ConstraintRow& r : rows) {
    if (r.c_g.size() != n) {
      throw std::invalid_argument("assemble_qp: row '" + r.tag + "' has width " + std::to_string(r.c_g.size()) +
                                  ", expected " + std::to_string(n));
    }
  }
  QpProblem qp(static_cast<int>(n), static_cast<int>(rows.size()));
  const std::array<double, kDecisionSize> diag{w.alpha_uC,
                                               w.alpha_uC * w.steer_factor,
                                               w.alpha_u1,
                                               w.alpha_u1 * w.steer_factor,
                                               w.slack[0],
                                               w.slack[1],
                                               w.slack[2],
                                               w.slack[3]};
  for (std::size_t i = 0; i < n; ++i) qp.H(i, i) = 2.0 * diag[i];

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const ConstraintRow& row = rows[r];
    // CBF: -c_g z <= c_f.  CLF: c_g z <= -c_f.
    const double sign = row.kind == RowKind::kCbf ? -1.0 : 1.0;
    double scale = 0.0;
    for (double g : row.c_g) scale = std::max(scale, std::abs(g));
    if (scale == 0.0) scale = 1.0;
    for (std::size_t i = 0; i < n; ++i) qp.A(r, i) = sign * row.c_g[i] / scale;
    qp.b(r) = (row.kind == RowKind::kCbf ? row.c_f : -row.c_f) / scale;
  }

  qp.lb(kSlotUC) = bounds.min.u;
  qp.ub(kSlotUC) = bounds.max.u;
  qp.lb(kSlotPhiC) = bounds.min.phi;
  qp.ub(kSlotPhiC) = bounds.max.phi;
  qp.lb(kSlotU1) = bounds.min.u;
  qp.ub(kSlotU1) = bounds.max.u;
  qp.lb(kSlotPhi1) = bounds.min.phi;
  qp.ub(kSlotPhi1) = bounds.max.phi;
  for (std::size_t j = 0; j < 4; ++j) {
    qp.lb(kSlotDelta + j) = 0.0;
    qp.ub(kSlotDelta + j) = std::numeric_limits<double>::infinity();
  }
  return qp;
}

}  // namespace mixedlane
