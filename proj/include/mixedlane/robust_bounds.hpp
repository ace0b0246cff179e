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

// Worst-case bounds of CBF rows over the uncertainty region that the state,
// the HDV estimation error and its rate may occupy until the next trigger.
//
// The pair objective L_f b + k b is minimized without sampling. Its structure
// makes a finite candidate set sufficient:
//   * the relative position (Δx, Δy) enters through two convex quadratics whose
//     minimum over an interval has a closed form;
//   * after that inner minimization the value is concave in the relative
//     drift velocity, which is affine in each speed, in ė and in the heading
//     direction vector (cos θ, sin θ);
//   * a concave function over a product of polytopes attains its minimum at a
//     vertex combination, so each speed and each ė component only needs its two
//     endpoints, and each heading arc is enclosed in the triangle formed by its
//     endpoint tangents.
// The triangle enclosure makes the result a lower bound of the exact minimum,
// tight to O(width²) in the heading widths, and it is monotone: a wider arc's
// triangle contains a narrower arc's triangle.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mixedlane/safety_constraints.hpp"
#include "mixedlane/types.hpp"

namespace mixedlane {

using IntervalQuad = std::array<Interval, 4>;  // (x, y, theta, v)

struct BoundVectors {
  BoundVector w{0.2, 0.1, 0.1, 1.0};
  BoundVector nu{0.5, 0.2, 0.1, 1.0};
  /// Per-vehicle drift bounds, indexed by Vehicle.
  std::array<BoundVector, 4> s{{{0.01, 0.005, 0.01, 1.0},
                                {0.01, 0.005, 0.01, 1.0},
                                {0.01, 0.005, 0.01, 1.0},
                                {0.01, 0.005, 0.01, 1.0}}};

  static BoundVectors zero() {
    BoundVectors b;
    b.w = {};
    b.nu = {};
    b.s = {};
    return b;
  }

  void validate() const {
    const auto check = [](const BoundVector& q, const char* name) {
      for (std::size_t i = 0; i < 4; ++i) {
        if (!(q[i] >= 0.0)) throw ConfigError(std::string("bounds.") + name + ": components must be >= 0");
      }
    };
    check(w, "w");
    check(nu, "nu");
    for (const auto& si : s) check(si, "s");
  }
};

/// Cartesian product of per-vehicle state intervals, |e| <= w and |ė| <= ν.
/// The HDV intervals are anchored at the adaptive estimate.
struct UncertaintyBox {
  std::array<IntervalQuad, 4> state{};
  IntervalQuad error{};
  IntervalQuad error_rate{};
  double anchor_time{0.0};

  const IntervalQuad& of(Vehicle v) const { return state[index(v)]; }

  void validate() const {
    const auto check = [](const IntervalQuad& q) {
      for (const Interval& i : q) {
        if (!(i.lo <= i.hi)) throw ConfigError("uncertainty box: empty or inverted interval");
      }
    };
    for (const auto& q : state) check(q);
    check(error);
    check(error_rate);
  }
};

/// `states` holds measured states indexed by Vehicle; its HDV entry is ignored in
/// favor of `est_hdv`.
inline UncertaintyBox build_uncertainty_box(const std::array<VehicleState, 4>& states, const VehicleState& est_hdv,
                                            const BoundVectors& bounds, double anchor_time = 0.0) {
  UncertaintyBox box;
  box.anchor_time = anchor_time;
  for (std::size_t v = 0; v < 4; ++v) {
    const VehicleState& anchor = v == index(Vehicle::kH) ? est_hdv : states[v];
    for (std::size_t c = 0; c < 4; ++c) box.state[v][c] = Interval::around(anchor[c], bounds.s[v][c]);
  }
  for (std::size_t c = 0; c < 4; ++c) {
    box.error[c] = Interval::around(0.0, bounds.w[c]);
    box.error_rate[c] = Interval::around(0.0, bounds.nu[c]);
  }
  box.validate();
  return box;
}

/// Model information a pair row needs beyond the box.
struct RobustPairModel {
  OtherModel model{OtherModel::kAdaptive};
  AdaptiveTerms terms{};
  ControlInput other_control{};
};

namespace detail {

struct Point2 {
  double x, y;
};

/// Vertices of a convex polygon enclosing {(cos θ, sin θ) : θ in arc}.
inline std::vector<Point2> arc_enclosure(Interval arc) {
  if (arc.degenerate()) return {{std::cos(arc.lo), std::sin(arc.lo)}};
  const double width = arc.width();
  if (width <= 2.0 * std::numbers::pi / 3.0) {
    const double mid = arc.mid();
    const double r = 1.0 / std::cos(0.5 * width);
    return {{std::cos(arc.lo), std::sin(arc.lo)},
            {std::cos(arc.hi), std::sin(arc.hi)},
            {r * std::cos(mid), r * std::sin(mid)}};
  }
  // Contains every triangle above (apex radius <= 2) and the whole circle.
  return {{-2.0, -2.0}, {2.0, -2.0}, {2.0, 2.0}, {-2.0, 2.0}};
}

inline std::vector<double> endpoints(Interval i) {
  if (i.degenerate()) return {i.lo};
  return {i.lo, i.hi};
}

/// min over d in [lo, hi] of quad·d² + lin·d, quad > 0.
inline double min_convex_quadratic(Interval d, double quad, double lin) {
  const double vertex = std::clamp(-lin / (2.0 * quad), d.lo, d.hi);
  return (quad * vertex + lin) * vertex;
}

/// Exact range of A sin θ + B cos θ over an interval of θ.
inline Interval trig_range(double A, double B, Interval theta) {
  const auto f = [&](double t) { return A * std::sin(t) + B * std::cos(t); };
  double lo = std::min(f(theta.lo), f(theta.hi));
  double hi = std::max(f(theta.lo), f(theta.hi));
  if (!theta.degenerate() && (A != 0.0 || B != 0.0)) {
    const double base = std::atan2(A, B);  // derivative A cos - B sin vanishes here (+ kπ)
    const double k0 = std::ceil((theta.lo - base) / std::numbers::pi);
    for (double k = k0; base + k * std::numbers::pi <= theta.hi; k += 1.0) {
      const double v = f(base + k * std::numbers::pi);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  return {lo, hi};
}

/// Range of the product of two intervals.
inline Interval product_range(Interval a, Interval b) {
  const std::array<double, 4> c{a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi};
  return {*std::min_element(c.begin(), c.end()), *std::max_element(c.begin(), c.end())};
}

inline Interval sin_range(Interval t) { return trig_range(1.0, 0.0, t); }
inline Interval cos_range(Interval t) { return trig_range(0.0, 1.0, t); }

/// Relative position intervals (ego minus other, other shifted by e when adaptive).
inline std::pair<Interval, Interval> relative_position(VehiclePair pair, const UncertaintyBox& box,
                                                       const RobustPairModel& m) {
  const IntervalQuad& e = box.of(ego_of(pair));
  const IntervalQuad& o = box.of(other_of(pair));
  Interval ox = o[0];
  Interval oy = o[1];
  if (m.model == OtherModel::kAdaptive) {
    ox = ox + box.error[0];
    oy = oy + box.error[1];
  }
  return {e[0] - ox, e[1] - oy};
}

}  // namespace detail

/// Lower bound of min over the box of L_f b + k b for one pair (exact when no
/// heading interval has positive width).
inline double robust_lf_min(VehiclePair pair, const UncertaintyBox& box, const BarrierParams& params,
                            const RobustPairModel& m) {
  box.validate();
  const Ellipse& el = params.ellipse_of(ego_of(pair));
  const double k = params.gain(pair);
  const double ia2 = 1.0 / (el.a * el.a);
  const double ib2 = 1.0 / (el.b * el.b);
  const IntervalQuad& ego = box.of(ego_of(pair));
  const IntervalQuad& oth = box.of(other_of(pair));
  const auto [dx, dy] = detail::relative_position(pair, box, m);

  const auto ego_dirs = detail::arc_enclosure(ego[2]);
  const auto oth_dirs = detail::arc_enclosure(oth[2]);
  const auto ego_speeds = detail::endpoints(ego[3]);
  const auto oth_speeds = detail::endpoints(oth[3]);
  const bool adaptive = m.model == OtherModel::kAdaptive;
  const auto edx = adaptive ? detail::endpoints(box.error_rate[0]) : std::vector<double>{0.0};
  const auto edy = adaptive ? detail::endpoints(box.error_rate[1]) : std::vector<double>{0.0};
  const double off_x = adaptive ? m.terms.x : 0.0;
  const double off_y = adaptive ? m.terms.y : 0.0;
  const double phi_o = m.model == OtherModel::kKnownHdv ? m.other_control.phi : 0.0;

  double best = std::numeric_limits<double>::infinity();
  for (double ve : ego_speeds) {
    for (const auto& pe : ego_dirs) {
      const double evx = ve * pe.x;
      const double evy = ve * pe.y;
      const double speed_term = -k * ve * ve;
      for (double vo : oth_speeds) {
        for (const auto& po : oth_dirs) {
          const double ovx = vo * (po.x - phi_o * po.y) + off_x;
          const double ovy = vo * (po.y + phi_o * po.x) + off_y;
          for (double ex : edx) {
            const double qx = detail::min_convex_quadratic(dx, k * ia2, 2.0 * ia2 * (evx - ovx - ex));
            for (double ey : edy) {
              const double qy = detail::min_convex_quadratic(dy, k * ib2, 2.0 * ib2 * (evy - ovy - ey));
              best = std::min(best, qx + qy + speed_term);
            }
          }
        }
      }
    }
  }
  return best;
}

/// Ranges of the L_g b coefficients of a pair row over the box, per decision slot.
struct PairLgRanges {
  Interval ego_accel;
  Interval ego_steer;
  Interval other_steer;  // zero unless the other vehicle is controlled
};

inline PairLgRanges robust_lg_ranges(VehiclePair pair, const UncertaintyBox& box, const BarrierParams& params,
                                     const RobustPairModel& m) {
  box.validate();
  const Ellipse& el = params.ellipse_of(ego_of(pair));
  const double ia2 = 1.0 / (el.a * el.a);
  const double ib2 = 1.0 / (el.b * el.b);
  const IntervalQuad& ego = box.of(ego_of(pair));
  const IntervalQuad& oth = box.of(other_of(pair));
  const auto [dx, dy] = detail::relative_position(pair, box, m);

  PairLgRanges r;
  r.ego_accel = {-2.0 * ego[3].hi, -2.0 * ego[3].lo};

  // coefficient = 2 v (sgn_x Δx/a² sin θ + sgn_y Δy/b² cos θ): corners in (v, Δx, Δy), exact in θ.
  const auto steer_range = [&](const Interval& speed, const Interval& heading, double sgn_x, double sgn_y) {
    Interval out{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (double v : detail::endpoints(speed)) {
      for (double ddx : detail::endpoints(dx)) {
        for (double ddy : detail::endpoints(dy)) {
          const Interval t = detail::trig_range(2.0 * v * sgn_x * ddx * ia2, 2.0 * v * sgn_y * ddy * ib2, heading);
          out.lo = std::min(out.lo, t.lo);
          out.hi = std::max(out.hi, t.hi);
        }
      }
    }
    return out;
  };
  r.ego_steer = steer_range(ego[3], ego[2], -1.0, 1.0);
  r.other_steer = m.model == OtherModel::kControlled ? steer_range(oth[3], oth[2], 1.0, -1.0) : Interval{0.0, 0.0};
  return r;
}

/// Sign-dependent worst case of a coefficient: its minimum if the control it
/// multiplies is non-negative, its maximum otherwise.
inline double worst_coefficient(Interval range, double control) { return control >= 0.0 ? range.lo : range.hi; }

/// Worst-case (u, φ) coefficients of the ego vehicle in a pair row.
inline std::pair<double, double> robust_lg_min(VehiclePair pair, const UncertaintyBox& box,
                                               const BarrierParams& params, const RobustPairModel& m, double sign_u,
                                               double sign_phi) {
  const PairLgRanges r = robust_lg_ranges(pair, box, params, m);
  return {worst_coefficient(r.ego_accel, sign_u), worst_coefficient(r.ego_steer, sign_phi)};
}

/// Everything robustify_rows needs besides the rows.
struct RobustContext {
  const UncertaintyBox* box{nullptr};
  BarrierParams params{};
  LimitParams limits{};
  /// Per pair, how the other vehicle is modeled.
  std::array<RobustPairModel, 4> pair_models{};
};

/// Replaces every CBF row with its worst case over the box given the signs of
/// the nominal decision (u_C, φ_C, u_1, φ_1, ...). CLF rows pass through.
inline std::vector<ConstraintRow> robustify_rows(std::span<const ConstraintRow> nominal, const RobustContext& ctx,
                                                 std::span<const double> nominal_decision) {
  if (ctx.box == nullptr) throw std::invalid_argument("robustify_rows: missing uncertainty box");
  const UncertaintyBox& box = *ctx.box;
  box.validate();
  const auto sign_of = [&](std::size_t slot) { return slot < nominal_decision.size() ? nominal_decision[slot] : 0.0; };

  std::vector<ConstraintRow> out;
  out.reserve(nominal.size());
  for (const ConstraintRow& row : nominal) {
    if (row.kind == RowKind::kClf) {
      out.push_back(row);
      continue;
    }
    ConstraintRow r = row;
    std::fill(r.c_g.begin(), r.c_g.end(), 0.0);
    const double l = ctx.limits.lane_width;
    switch (row.source) {
      case RowSource::kPair: {
        const RobustPairModel& m = ctx.pair_models[index(row.pair)];
        const Vehicle ego = ego_of(row.pair);
        r.c_f = robust_lf_min(row.pair, box, ctx.params, m);
        const PairLgRanges g = robust_lg_ranges(row.pair, box, ctx.params, m);
        r.c_g[accel_slot(ego)] = worst_coefficient(g.ego_accel, sign_of(accel_slot(ego)));
        r.c_g[steer_slot(ego)] = worst_coefficient(g.ego_steer, sign_of(steer_slot(ego)));
        if (m.model == OtherModel::kControlled) {
          const Vehicle other = other_of(row.pair);
          r.c_g[steer_slot(other)] = worst_coefficient(g.other_steer, sign_of(steer_slot(other)));
        }
        break;
      }
      case RowSource::kSpeedMin: {
        const IntervalQuad& s = box.of(row.vehicle);
        r.c_f = ctx.params.speed_gain * (s[3].lo - ctx.limits.v_min);
        r.c_g[accel_slot(row.vehicle)] = 1.0;
        break;
      }
      case RowSource::kSpeedMax: {
        const IntervalQuad& s = box.of(row.vehicle);
        r.c_f = ctx.params.speed_gain * (ctx.limits.v_max - s[3].hi);
        r.c_g[accel_slot(row.vehicle)] = -1.0;
        break;
      }
      case RowSource::kLateralMin: {
        const IntervalQuad& s = box.of(row.vehicle);
        const Interval vs = detail::product_range(s[3], detail::sin_range(s[2]));
        const Interval vc = detail::product_range(s[3], detail::cos_range(s[2]));
        r.c_f = vs.lo + ctx.params.lateral_gain * (s[1].lo + 0.5 * l);
        const std::size_t slot = steer_slot(row.vehicle);
        r.c_g[slot] = worst_coefficient(vc, sign_of(slot));
        break;
      }
      case RowSource::kLateralMax: {
        const IntervalQuad& s = box.of(row.vehicle);
        const Interval vs = detail::product_range(s[3], detail::sin_range(s[2]));
        const Interval vc = detail::product_range(s[3], detail::cos_range(s[2]));
        r.c_f = -vs.hi + ctx.params.lateral_gain * (1.5 * l - s[1].hi);
        const std::size_t slot = steer_slot(row.vehicle);
        r.c_g[slot] = worst_coefficient({-vc.hi, -vc.lo}, sign_of(slot));
        break;
      }
      case RowSource::kClf:
        break;
    }
    r.tag = row.tag + ":robust";
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mixedlane
