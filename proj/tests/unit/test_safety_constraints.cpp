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

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "mixedlane/random.hpp"
#include "mixedlane/safety_constraints.hpp"

namespace mixedlane {
namespace {

const VehicleState kC0{20, 0, 0, 25};
const VehicleState kOne0{50, 4, 0, 29};
const VehicleState kH0{10, 4, 0, 28};
const VehicleState kU0{60, 0, 0, 20};

double dot(const ConstraintRow& r, const std::vector<double>& z) { return r.evaluate(z); }

TEST(BarrierValue, InitialScene) {
  const BarrierParams p;
  EXPECT_NEAR(barrier_value(VehiclePair::kCH, kC0, kH0, p), 100 / 0.36 + 1600 - 625, 1e-9);
  EXPECT_NEAR(barrier_value(VehiclePair::kCH, kC0, kH0, p), 1252.7777777777778, 1e-9);
  EXPECT_NEAR(barrier_value(VehiclePair::kCU, kC0, kU0, p), 3819.4444444444443, 1e-9);
  EXPECT_DOUBLE_EQ(barrier_value(VehiclePair::kCH, {5, 1, 0, 25}, {5, 1, 0.3, 10}, p), -625.0);
}

TEST(BarrierValue, SymmetryAndTranslationInvariance) {
  const BarrierParams p;
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const VehicleState ego{rng.uniform(-50, 50), rng.uniform(-2, 6), rng.uniform(-0.3, 0.3), rng.uniform(15, 35)};
    const double dx = rng.uniform(-30, 30);
    const double dy = rng.uniform(-5, 5);
    const VehicleState a{ego.x + dx, ego.y + dy, 0, 20};
    const VehicleState b{ego.x - dx, ego.y - dy, 0, 20};
    EXPECT_NEAR(barrier_value(VehiclePair::kCH, ego, a, p), barrier_value(VehiclePair::kCH, ego, b, p), 1e-9);
    const double tx = rng.uniform(-100, 100);
    const double ty = rng.uniform(-3, 3);
    const VehicleState ego_t{ego.x + tx, ego.y + ty, ego.theta, ego.v};
    const VehicleState a_t{a.x + tx, a.y + ty, a.theta, a.v};
    EXPECT_NEAR(barrier_value(VehiclePair::kCH, ego, a, p), barrier_value(VehiclePair::kCH, ego_t, a_t, p),
                1e-7 * std::max(1.0, std::abs(barrier_value(VehiclePair::kCH, ego, a, p))));
  }
}

TEST(CbfRowPair, InitialSceneByHand) {
  BarrierParams p;
  PairInputs in;
  in.pair = VehiclePair::kCH;
  in.ego = kC0;
  in.other = kH0;
  in.model = OtherModel::kAdaptive;

  const ConstraintRow row = cbf_row_pair(in, p);
  EXPECT_EQ(row.kind, RowKind::kCbf);
  const double lf = 2.0 * 10 / 0.36 * (25 - 28);
  EXPECT_NEAR(lf, -166.66666666666666, 1e-9);
  EXPECT_NEAR(row.c_f, lf + 1252.7777777777778, 1e-9);
  EXPECT_NEAR(row.c_f, 1086.1111111111111, 1e-9);
  EXPECT_DOUBLE_EQ(row.c_g[kSlotUC], -50.0);
  EXPECT_NEAR(row.c_g[kSlotPhiC], -20000.0, 1e-9);
  for (std::size_t i = kSlotU1; i < kDecisionSize; ++i) EXPECT_EQ(row.c_g[i], 0.0);

  // Drop the class-K part by shrinking the gain to (almost) nothing.
  p.pair_gain[index(VehiclePair::kCH)] = 1e-300;
  EXPECT_NEAR(cbf_row_pair(in, p).c_f, -166.66666666666666, 1e-9);
}

TEST(CbfRowPair, SteeringCoefficientVanishesWhenAligned) {
  const BarrierParams p;
  PairInputs in;
  in.pair = VehiclePair::kCU;
  in.ego = {20, 0, 0, 25};
  in.other = {45, 0, 0, 20};
  in.model = OtherModel::kConstantSpeed;
  EXPECT_EQ(cbf_row_pair(in, p).c_g[kSlotPhiC], 0.0);
}

TEST(CbfRowPair, ControlledOtherGetsSteeringColumn) {
  const BarrierParams p;
  PairInputs in;
  in.pair = VehiclePair::k1C;
  in.ego = kOne0;
  in.other = {20, 1.0, 0.1, 25};
  in.model = OtherModel::kControlled;
  const ConstraintRow row = cbf_row_pair(in, p);
  EXPECT_DOUBLE_EQ(row.c_g[kSlotU1], -58.0);
  EXPECT_EQ(row.c_g[kSlotUC], 0.0);
  EXPECT_NE(row.c_g[kSlotPhiC], 0.0);
  // ∂b/∂(x_C, y_C) · g_φ(x_C)
  const double dx = 30.0, dy = 3.0;
  const double expect = -(2 * dx / 0.36 * (-25 * std::sin(0.1)) + 2 * dy / 0.01 * (25 * std::cos(0.1)));
  EXPECT_NEAR(row.c_g[kSlotPhiC], expect, 1e-9);
}

// Barrier derivative along exact dynamics, by central differences, against the
// analytic row for every pair and other-vehicle model.
TEST(CbfRowPair, MatchesFiniteDifferenceAlongDynamics) {
  const BarrierParams p;
  const double lw = kDefaultWheelbase;
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const VehiclePair pair = kAllPairs[static_cast<std::size_t>(trial % 4)];
    const auto rand_state = [&](double x0) {
      return VehicleState{x0 + rng.uniform(-20, 20), rng.uniform(-1, 5), rng.uniform(-0.2, 0.2), rng.uniform(16, 34)};
    };
    const VehicleState ego = rand_state(30);
    VehicleState other = rand_state(30);
    const ControlInput ego_c{rng.uniform(-3, 3), rng.uniform(-0.1, 0.1)};
    const ControlInput other_c{rng.uniform(-3, 3), rng.uniform(-0.1, 0.1)};

    PairInputs in;
    in.pair = pair;
    in.ego = ego;
    std::function<StateRate(const VehicleState&)> other_rate;
    switch (pair) {
      case VehiclePair::k1C:
        in.model = OtherModel::kControlled;
        other_rate = [&](const VehicleState& s) { return cav_derivative(s, other_c, lw); };
        break;
      case VehiclePair::kCU:
        in.model = OtherModel::kConstantSpeed;
        other.theta = 0.0;
        other_rate = [&](const VehicleState& s) { return cav_derivative(s, {}, lw); };
        break;
      default:
        in.model = OtherModel::kKnownHdv;
        in.other_control = other_c;
        other_rate = [&](const VehicleState& s) { return cav_derivative(s, other_c, lw); };
        break;
    }
    in.other = other;

    const double h = 1e-5;
    const auto b_at = [&](double t) {
      const VehicleState e = integrate_step(ego, [&](const VehicleState& s) { return cav_derivative(s, ego_c, lw); }, t);
      const VehicleState o = integrate_step(other, other_rate, t);
      return barrier_value(pair, e, o, p);
    };
    const double fd = (b_at(h) - b_at(-h)) / (2 * h) + p.gain(pair) * barrier_value(pair, ego, other, p);

    std::vector<double> z(kDecisionSize, 0.0);
    const Vehicle ev = ego_of(pair);
    z[accel_slot(ev)] = ego_c.u;
    z[steer_slot(ev)] = ego_c.phi;
    if (pair == VehiclePair::k1C) {
      z[accel_slot(Vehicle::kC)] = other_c.u;
      z[steer_slot(Vehicle::kC)] = other_c.phi;
    }
    const double analytic = dot(cbf_row_pair(in, p), z);
    EXPECT_NEAR(fd, analytic, 1e-5 * std::max(1.0, std::abs(analytic))) << "pair " << pair_name(pair);
  }
}

// With measured e and ė, the adaptive-model row is the exact derivative of the
// true barrier: x_H = x̄_H + e and ẋ_H = f_a(x̄_H) + ė.
TEST(CbfRowPair, AdaptiveRowEqualsTrueDerivative) {
  const BarrierParams p;
  const double lw = kDefaultWheelbase;
  const VehicleState truth{12, 3.7, 0.04, 27};
  const VehicleState est{11.9, 3.75, 0.0, 27.5};
  const AdaptiveTerms h{0.3, -0.1, -10.0, 0.2};
  const ControlInput hc{0.8, 0.05};
  const StateRate sensed = cav_derivative(truth, hc, lw);
  PairInputs in;
  in.pair = VehiclePair::kCH;
  in.ego = kC0;
  in.other = est;
  in.model = OtherModel::kAdaptive;
  in.terms = h;
  in.error = measure_error(truth, est);
  in.error_rate = measure_error_rate(sensed, hdv_adaptive_derivative(est, h, lw));

  PairInputs known = in;
  known.model = OtherModel::kKnownHdv;
  known.other = truth;
  known.other_control = hc;
  EXPECT_NEAR(cbf_row_pair(in, p).c_f, cbf_row_pair(known, p).c_f, 1e-9);
}

TEST(LimitRows, SpeedAndLateralByHand) {
  const BarrierParams p;
  const LimitParams lim;
  const auto rows = limit_cbf_rows(kC0, kOne0, lim, p);
  ASSERT_EQ(rows.size(), 8u);
  // v_C = 25 -> u_C + 10 >= 0
  EXPECT_DOUBLE_EQ(rows[0].c_f, 10.0);
  EXPECT_DOUBLE_EQ(rows[0].c_g[kSlotUC], 1.0);
  // y_C = 0 upper band: -25 φ_C + 6 >= 0
  EXPECT_DOUBLE_EQ(rows[3].c_f, 6.0);
  EXPECT_DOUBLE_EQ(rows[3].c_g[kSlotPhiC], -25.0);
  // lower band: 25 φ_C + 2 >= 0
  EXPECT_DOUBLE_EQ(rows[2].c_f, 2.0);
  EXPECT_DOUBLE_EQ(rows[2].c_g[kSlotPhiC], 25.0);
  // vehicle 1 rows act on its own slots
  EXPECT_DOUBLE_EQ(rows[4].c_g[kSlotU1], 1.0);
  EXPECT_DOUBLE_EQ(rows[4].c_f, 14.0);

  const auto at_max = limit_cbf_rows({0, 0, 0, 35}, kOne0, lim, p);
  EXPECT_DOUBLE_EQ(at_max[1].c_f, 0.0);
  EXPECT_DOUBLE_EQ(at_max[1].c_g[kSlotUC], -1.0);
}

TEST(ClfRows, ByHand) {
  const ClfParams p;
  const auto rows = clf_rows({20, 0, 0, 30}, kOne0, p);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].c_f, 0.0);
  EXPECT_EQ(rows[0].c_g[kSlotUC], 0.0);
  EXPECT_EQ(rows[0].c_g[kSlotDelta], -1.0);

  const auto r2 = clf_rows(kC0, kOne0, p);
  EXPECT_DOUBLE_EQ(r2[0].c_g[kSlotUC], -10.0);
  EXPECT_DOUBLE_EQ(r2[0].c_f, 25.0);
  EXPECT_DOUBLE_EQ(r2[2].c_g[kSlotPhiC], -8.0 * 25.0);
  EXPECT_DOUBLE_EQ(r2[2].c_f, 16.0);
  EXPECT_EQ(r2[2].c_g[kSlotDelta + 2], -1.0);
  // Each CLF row owns exactly one slack.
  for (std::size_t j = 0; j < 4; ++j) {
    int slacks = 0;
    for (std::size_t k = 0; k < 4; ++k) slacks += r2[j].c_g[kSlotDelta + k] != 0.0;
    EXPECT_EQ(slacks, 1);
    EXPECT_EQ(r2[j].c_g[kSlotDelta + j], -1.0);
  }
}

TEST(AssembleQp, NoRowsGivesZero) {
  QpSolver solver;
  const QpProblem qp = assemble_qp({}, QpWeights{}, ControlBounds{});
  const QpSolution s = solver.solve(qp);
  ASSERT_EQ(s.status, QpStatus::kOptimal);
  EXPECT_LT(s.z.lpNorm<Eigen::Infinity>(), 1e-12);
}

TEST(AssembleQp, SingleActiveRow) {
  ConstraintRow row;
  row.c_f = -1.0;
  row.c_g[kSlotUC] = 1.0;  // u_C - 1 >= 0
  const std::vector<ConstraintRow> rows{row};
  QpSolver solver;
  const QpSolution s = solver.solve(assemble_qp(rows, QpWeights{}, ControlBounds{}));
  ASSERT_EQ(s.status, QpStatus::kOptimal);
  EXPECT_NEAR(s.z(kSlotUC), 1.0, 1e-12);
  for (int i = 1; i < 8; ++i) EXPECT_NEAR(s.z(i), 0.0, 1e-12);
}

TEST(AssembleQp, RejectsMismatchedRowWidth) {
  ConstraintRow row;
  row.c_g.resize(5);
  const std::vector<ConstraintRow> rows{row};
  EXPECT_THROW(assemble_qp(rows, QpWeights{}, ControlBounds{}), std::invalid_argument);
}

TEST(AssembleQp, InitialSceneIsFeasibleAndKktClean) {
  const BarrierParams bp;
  std::vector<ConstraintRow> rows;
  const std::array<std::pair<VehiclePair, OtherModel>, 4> pairs{{{VehiclePair::kCH, OtherModel::kAdaptive},
                                                                 {VehiclePair::k1C, OtherModel::kControlled},
                                                                 {VehiclePair::k1H, OtherModel::kAdaptive},
                                                                 {VehiclePair::kCU, OtherModel::kConstantSpeed}}};
  const std::array<VehicleState, 4> st{kOne0, kC0, kH0, kU0};
  for (const auto& [pair, model] : pairs) {
    PairInputs in;
    in.pair = pair;
    in.ego = st[index(ego_of(pair))];
    in.other = st[index(other_of(pair))];
    in.model = model;
    rows.push_back(cbf_row_pair(in, bp));
  }
  for (auto& r : limit_cbf_rows(kC0, kOne0, LimitParams{}, bp)) rows.push_back(r);
  for (auto& r : clf_rows(kC0, kOne0, ClfParams{})) rows.push_back(r);

  QpSolver solver;
  const QpProblem qp = assemble_qp(rows, QpWeights{}, ControlBounds{});
  const QpSolution s = solver.solve(qp);
  ASSERT_EQ(s.status, QpStatus::kOptimal);
  EXPECT_TRUE(verify_kkt(qp, s).ok(1e-6));
  std::vector<double> z(s.z.data(), s.z.data() + s.z.size());
  for (const auto& r : rows) EXPECT_GE(r.margin(z), -1e-8) << r.tag;
  // C steers toward the target lane.
  EXPECT_GT(s.z(kSlotPhiC), 0.0);
}

TEST(AssembleQp, WeightScalingLeavesArgminUnchanged) {
  const BarrierParams bp;
  Rng rng(17);
  QpSolver solver;
  for (int trial = 0; trial < 50; ++trial) {
    const VehicleState c{20, rng.uniform(0, 3), rng.uniform(-0.1, 0.3), rng.uniform(18, 32)};
    const VehicleState one{50, 4, 0, rng.uniform(20, 32)};
    std::vector<ConstraintRow> rows = limit_cbf_rows(c, one, LimitParams{}, bp);
    for (auto& r : clf_rows(c, one, ClfParams{})) rows.push_back(r);
    PairInputs in;
    in.pair = VehiclePair::kCH;
    in.ego = c;
    in.other = {rng.uniform(0, 15), 4, 0, rng.uniform(20, 32)};
    rows.push_back(cbf_row_pair(in, bp));

    QpWeights w;
    QpWeights w2 = w;
    const double scale = rng.uniform(0.1, 50);
    w2.alpha_uC *= scale;
    w2.alpha_u1 *= scale;
    for (double& pj : w2.slack) pj *= scale;
    const QpSolution a = solver.solve(assemble_qp(rows, w, ControlBounds{}));
    const QpSolution b = solver.solve(assemble_qp(rows, w2, ControlBounds{}));
    ASSERT_EQ(a.status, QpStatus::kOptimal);
    ASSERT_EQ(b.status, QpStatus::kOptimal);
    EXPECT_LT((a.z - b.z).lpNorm<Eigen::Infinity>(), 1e-6);
  }
}

}  // namespace
}  // namespace mixedlane
