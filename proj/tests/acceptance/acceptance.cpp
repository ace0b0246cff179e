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

// Acceptance harness: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "mixedlane/batch.hpp"
#include "mixedlane/live_session.hpp"
#include "mixedlane/log_io.hpp"
#include "mixedlane/random.hpp"

namespace mixedlane {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kSeeds = 50;

struct Verdict {
  bool pass{false};
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Per-run facts kept from a batch sink.
struct RunFacts {
  Outcome outcome{Outcome::kRunning};
  double t_f{0.0};
  double y_c{0.0};
  double t_final{0.0};
  bool fallback{false};
  std::vector<EventRecord> events;
};

struct Batch {
  BatchReport report;
  std::vector<RunFacts> facts;
  double seconds{0.0};
};

Batch run_collecting(const Scenario& sc, int count, const std::string& label, bool keep_events = false) {
  Batch b;
  b.facts.resize(static_cast<std::size_t>(count));
  std::mutex mu;
  BatchOptions o;
  o.sink = [&](std::size_t i, const TrajectoryLog& log) {
    RunFacts f;
    f.outcome = log.outcome;
    f.t_f = log.t_f;
    f.y_c = log.final_states[index(Vehicle::kC)].y;
    f.t_final = log.config.controller.t_final;
    for (const EventRecord& e : log.events) f.fallback = f.fallback || e.kind == EventKind::kInfeasibleFallback;
    if (keep_events) f.events = log.events;
    const std::lock_guard<std::mutex> lock(mu);
    b.facts[i] = std::move(f);
  };
  const auto t0 = std::chrono::steady_clock::now();
  b.report = run_batch(sc, batch_seeds(1, static_cast<std::size_t>(count)), label, o);
  b.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return b;
}

double min_over_pairs(const Metrics& m) { return *std::min_element(m.min_barrier.begin(), m.min_barrier.end()); }

// ---------------------------------------------------------------------------

Verdict event_driven_safety(const Batch& ev) {
  int fallback_runs = 0;
  int safe = 0;
  int unsafe_clean = 0;
  for (std::size_t i = 0; i < ev.facts.size(); ++i) {
    const bool fb = ev.facts[i].fallback;
    const bool ok = min_over_pairs(ev.report.runs[i].metrics) >= 0.0;
    fallback_runs += fb;
    if (!fb && ok) ++safe;
    if (!fb && !ok) ++unsafe_clean;
  }
  int safe_any = 0;
  for (const RunResult& r : ev.report.runs) safe_any += min_over_pairs(r.metrics) >= 0.0;
  const bool pass = safe == kSeeds && ev.seconds < 300.0;
  return {pass, fmt("safe fallback-free runs %d/%d; runs with infeasible_fallback %d (expected 0); "
                    "violations among fallback-free runs %d; all-barrier-safe runs overall %d/%d; %.1f s",
                    safe, kSeeds, fallback_runs, unsafe_clean, safe_any, kSeeds, ev.seconds)};
}

Verdict time_driven_violation(const Batch& known, const Batch& unknown, double delta) {
  const std::size_t k = known.report.ch_violations();
  const std::size_t u = unknown.report.ch_violations();
  return {k >= 1 && u >= 1 && delta == 0.05,
          fmt("delta %.3f; min b_CH < 0 in case 1 (known HDV): %zu/%d runs, case 2 (unknown HDV): %zu/%d runs", delta,
              k, kSeeds, u, kSeeds)};
}

Verdict point_box_equivalence() {
  const ScenarioConfig cfg;
  ControllerParams ev = cfg.controller_params();
  ev.config.mode = ControlMode::kEventDriven;
  ev.config.bounds.w = ev.config.bounds.nu = {};
  ev.config.bounds.s.fill({});
  ControllerParams td = ev;
  td.config.mode = ControlMode::kTimeDriven;
  Rng rng(101);
  double worst = 0.0;
  int mismatched_status = 0;
  int fallbacks = 0;
  for (int i = 0; i < 100; ++i) {
    auto s = cfg.initial;
    for (VehicleState& v : s) {
      v.x += rng.uniform(-5.0, 5.0);
      v.y += rng.uniform(-0.8, 0.8);
      v.theta = rng.uniform(-0.15, 0.15);
      v.v += rng.uniform(-4.0, 4.0);
    }
    s[index(Vehicle::kU)].theta = 0.0;
    const ControlInput uh{rng.uniform(-2.0, 2.0), rng.uniform(-0.05, 0.05)};
    Snapshot snap;
    snap.states = s;
    snap.hdv_rate = hdv_true_derivative(s[index(Vehicle::kH)], uh, cfg.wheelbase, DisturbanceSample{});
    snap.hdv_control = uh;
    Controller a(ev, s[index(Vehicle::kH)]);
    Controller b(td, s[index(Vehicle::kH)]);
    const ControlDecision da = a.control_step(snap);
    const ControlDecision db = b.control_step(snap);
    mismatched_status += da.fallback != db.fallback;
    fallbacks += da.fallback;
    for (double d : {da.c.u - db.c.u, da.c.phi - db.c.phi, da.one.u - db.one.u, da.one.phi - db.one.phi}) {
      worst = std::max(worst, std::abs(d));
    }
  }
  return {worst <= 1e-8 && mismatched_status == 0,
          fmt("100 states, max control difference %.3e, status mismatches %d, infeasible in both %d", worst,
              mismatched_status, fallbacks)};
}

double sample_in(Rng& rng, Interval i) { return i.degenerate() ? i.lo : rng.uniform(i.lo, i.hi); }
VehicleState sample_state(Rng& rng, const IntervalQuad& q) {
  return {sample_in(rng, q[0]), sample_in(rng, q[1]), sample_in(rng, q[2]), sample_in(rng, q[3])};
}

Verdict robust_min_oracle() {
  const ScenarioConfig cfg;
  const BarrierParams bp = cfg.barrier;
  const LimitParams lim{cfg.v_min, cfg.v_max, cfg.lane_width};
  constexpr int kBoxes = 100;
  constexpr int kSamples = 10000;
  Rng rng(404);
  std::map<std::string, int> checked;
  int failures = 0;
  double worst_gap = kInf;  // min over checks of (MC minimum - bound)
  std::string worst_kind;
  const auto record = [&](const std::string& kind, double bound, double mc) {
    ++checked[kind];
    if (bound > mc + 1e-6) ++failures;
    if (mc - bound < worst_gap) {
      worst_gap = mc - bound;
      worst_kind = kind;
    }
  };
  for (int trial = 0; trial < kBoxes; ++trial) {
    auto st = cfg.initial;
    for (VehicleState& s : st) {
      s.x += rng.uniform(-10, 10);
      s.y += rng.uniform(-1, 1);
      s.theta = rng.uniform(-0.2, 0.2);
      s.v += rng.uniform(-4, 4);
    }
    st[index(Vehicle::kU)].theta = 0.0;
    BoundVectors b = cfg.controller.bounds;
    const double grow = rng.uniform(0.0, 4.0);
    b.w = grow * b.w;
    b.nu = grow * b.nu;
    for (auto& s : b.s) s = grow * s;
    const VehicleState est{st[index(Vehicle::kH)].x + rng.uniform(-0.2, 0.2), st[index(Vehicle::kH)].y,
                           st[index(Vehicle::kH)].theta, st[index(Vehicle::kH)].v + rng.uniform(-1, 1)};
    st[index(Vehicle::kH)] = est;
    const UncertaintyBox box = build_uncertainty_box(st, est, b);

    // Pair rows under every model the controller can assign.
    const ControlInput uh{rng.uniform(-3, 3), rng.uniform(-0.1, 0.1)};
    const AdaptiveTerms terms{rng.uniform(-1, 1), rng.uniform(-0.5, 0.5), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const std::vector<std::pair<VehiclePair, OtherModel>> kinds{
        {VehiclePair::kCH, OtherModel::kAdaptive},   {VehiclePair::kCH, OtherModel::kKnownHdv},
        {VehiclePair::k1H, OtherModel::kAdaptive},   {VehiclePair::k1H, OtherModel::kKnownHdv},
        {VehiclePair::k1C, OtherModel::kControlled}, {VehiclePair::kCU, OtherModel::kConstantSpeed}};
    for (const auto& [pair, model] : kinds) {
      RobustPairModel m;
      m.model = model;
      m.terms = terms;
      m.other_control = uh;
      const double bound = robust_lf_min(pair, box, bp, m);
      double mc = kInf;
      for (int k = 0; k < kSamples; ++k) {
        PairInputs in;
        in.pair = pair;
        in.model = model;
        in.terms = terms;
        in.other_control = uh;
        in.ego = sample_state(rng, box.of(ego_of(pair)));
        in.other = sample_state(rng, box.of(other_of(pair)));
        in.error = {sample_in(rng, box.error[0]), sample_in(rng, box.error[1]), 0, 0};
        in.error_rate = {sample_in(rng, box.error_rate[0]), sample_in(rng, box.error_rate[1]), 0, 0};
        mc = std::min(mc, cbf_row_pair(in, bp).c_f);
      }
      record(std::string(pair_name(pair)) + "/" + std::to_string(static_cast<int>(model)), bound, mc);
    }

    // Speed and lane-band rows of both CAVs.
    RobustContext ctx;
    ctx.box = &box;
    ctx.params = bp;
    ctx.limits = lim;
    const auto nominal = limit_cbf_rows(st[index(Vehicle::kC)], st[index(Vehicle::kOne)], lim, bp);
    const std::vector<double> z(kDecisionSize, 0.0);
    const auto robust = robustify_rows(nominal, ctx, z);
    std::vector<double> mc(nominal.size(), kInf);
    for (int k = 0; k < kSamples; ++k) {
      const VehicleState c = sample_state(rng, box.of(Vehicle::kC));
      const VehicleState one = sample_state(rng, box.of(Vehicle::kOne));
      const auto rows = limit_cbf_rows(c, one, lim, bp);
      for (std::size_t r = 0; r < rows.size(); ++r) mc[r] = std::min(mc[r], rows[r].c_f);
    }
    for (std::size_t r = 0; r < nominal.size(); ++r) {
      const std::string tag = nominal[r].tag;
      record(tag.substr(0, tag.find(':')), robust[r].c_f, mc[r]);
    }
  }
  int total = 0;
  for (const auto& [k, n] : checked) total += n;
  return {failures == 0, fmt("%d boxes x %d samples, %d row checks over %zu row kinds, violations %d, "
                             "tightest margin %.3e (%s)",
                             kBoxes, kSamples, total, checked.size(), failures, worst_gap, worst_kind.c_str())};
}

Verdict lie_derivative_consistency() {
  Scenario sc;
  sc.config.disturbance.enabled = false;
  const BarrierParams bp = sc.config.barrier;
  const double lw = sc.config.wheelbase;
  std::vector<Sample> points;
  for (std::uint64_t seed = 1; points.size() < 1000; ++seed) {
    sc.config.seed = seed;
    RunOptions ro;
    ro.sample_stride = 37;
    const TrajectoryLog log = run_scenario(sc.config, sc.policy, ro);
    for (const Sample& s : log.samples) {
      if (points.size() < 1000) points.push_back(s);
    }
  }
  double worst = 0.0;
  int failures = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Sample& s = points[i];
    const VehiclePair pair = kAllPairs[i % 4];
    const Vehicle ev = ego_of(pair);
    const Vehicle ov = other_of(pair);
    const auto control_of = [&](Vehicle v) {
      switch (v) {
        case Vehicle::kC: return s.control_c;
        case Vehicle::kOne: return s.control_one;
        case Vehicle::kH: return s.control_h;
        default: return ControlInput{};
      }
    };
    const auto rate_of = [&](Vehicle v) -> std::function<StateRate(const VehicleState&)> {
      if (v == Vehicle::kH) {
        return [&, v](const VehicleState& x) { return hdv_true_derivative(x, control_of(v), lw, DisturbanceSample{}); };
      }
      return [&, v](const VehicleState& x) { return cav_derivative(x, control_of(v), lw); };
    };
    PairInputs in;
    in.pair = pair;
    in.ego = s.states[index(ev)];
    in.other = s.states[index(ov)];
    in.model = pair == VehiclePair::k1C   ? OtherModel::kControlled
               : pair == VehiclePair::kCU ? OtherModel::kConstantSpeed
                                          : OtherModel::kKnownHdv;
    in.other_control = control_of(ov);
    std::vector<double> z(kDecisionSize, 0.0);
    z[accel_slot(ev)] = control_of(ev).u;
    z[steer_slot(ev)] = control_of(ev).phi;
    if (in.model == OtherModel::kControlled) {
      z[accel_slot(ov)] = control_of(ov).u;
      z[steer_slot(ov)] = control_of(ov).phi;
    }
    const double analytic = cbf_row_pair(in, bp).evaluate(z);
    const double h = 1e-5;
    const auto ego_rate = rate_of(ev);
    const auto other_rate = rate_of(ov);
    const auto b_at = [&](double t) {
      return barrier_value(pair, integrate_step(in.ego, ego_rate, t), integrate_step(in.other, other_rate, t), bp);
    };
    const double fd = (b_at(h) - b_at(-h)) / (2 * h) + bp.gain(pair) * barrier_value(pair, in.ego, in.other, bp);
    const double rel = std::abs(fd - analytic) / std::max(1.0, std::abs(analytic));
    worst = std::max(worst, rel);
    failures += rel > 1e-3;
  }
  return {failures == 0 && points.size() == 1000,
          fmt("%zu trajectory points, max relative error %.3e, over tolerance %d", points.size(), worst, failures)};
}

// Accelerated projected gradient on the dual of min 1/2 z'Hz + f'z s.t. Cz <= d.
Eigen::VectorXd dual_gradient_oracle(const QpProblem& p, int iters) {
  const Eigen::Index n = p.H.rows();
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;
  for (Eigen::Index i = 0; i < p.A.rows(); ++i) {
    rows.emplace_back(p.A.row(i).transpose());
    rhs.push_back(p.b(i));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::isfinite(p.lb(j))) {
      rows.emplace_back(-Eigen::VectorXd::Unit(n, j));
      rhs.push_back(-p.lb(j));
    }
    if (std::isfinite(p.ub(j))) {
      rows.emplace_back(Eigen::VectorXd::Unit(n, j));
      rhs.push_back(p.ub(j));
    }
  }
  const auto m = static_cast<Eigen::Index>(rows.size());
  const Eigen::MatrixXd Hinv = p.H.inverse();
  if (m == 0) return -Hinv * p.f;
  Eigen::MatrixXd C(m, n);
  Eigen::VectorXd d(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    C.row(i) = rows[static_cast<std::size_t>(i)].transpose();
    d(i) = rhs[static_cast<std::size_t>(i)];
  }
  const double L = (C * Hinv * C.transpose()).eigenvalues().real().maxCoeff();
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd y = mu;
  double t = 1.0;
  for (int k = 0; k < iters; ++k) {
    const Eigen::VectorXd z = -Hinv * (p.f + C.transpose() * y);
    const Eigen::VectorXd next = (y + (C * z - d) / L).cwiseMax(0.0);
    if ((y - next).dot(next - mu) > 0.0) {
      y = mu;
      t = 1.0;
      continue;
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / t_next) * (next - mu);
    mu = next;
    t = t_next;
  }
  return -Hinv * (p.f + C.transpose() * mu);
}

Verdict qp_correctness(const std::vector<const Batch*>& batches) {
  double kkt = 0.0;
  double viol = 0.0;
  std::size_t solves = 0;
  for (const Batch* b : batches) {
    kkt = std::max(kkt, b->report.max_kkt_residual());
    for (const RunResult& r : b->report.runs) viol = std::max(viol, r.max_optimal_violation);
    solves += b->report.qp_solves();
  }
  Rng rng(606);
  QpSolver solver;
  double oracle_gap = 0.0;
  int not_optimal = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.next() % 7);
    const int m = static_cast<int>(rng.next() % 11);
    QpProblem p(n, m);
    Eigen::MatrixXd R(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) R(i, j) = rng.uniform(-1, 1);
    p.H = R * R.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd z0(n);
    for (int i = 0; i < n; ++i) {
      p.f(i) = rng.uniform(-5, 5);
      z0(i) = rng.uniform(-1, 1);
    }
    for (int r = 0; r < m; ++r) {
      for (int i = 0; i < n; ++i) p.A(r, i) = rng.uniform(-1, 1);
      p.b(r) = p.A.row(r).dot(z0) + rng.uniform(0, 0.5);
    }
    for (int i = 0; i < n; ++i) {
      if (rng.canonical() < 0.5) p.lb(i) = z0(i) - rng.uniform(0, 1);
      if (rng.canonical() < 0.5) p.ub(i) = z0(i) + rng.uniform(0, 1);
    }
    const QpSolution sol = solver.solve(p);
    if (sol.status != QpStatus::kOptimal) {
      ++not_optimal;
      continue;
    }
    oracle_gap = std::max(oracle_gap, (sol.z - dual_gradient_oracle(p, 40000)).lpNorm<Eigen::Infinity>());
  }
  const bool pass = kkt <= 1e-6 && viol <= 1e-6 && oracle_gap <= 1e-5 && not_optimal == 0;
  return {pass, fmt("%zu batch solves, max KKT residual %.2e, max primal violation %.2e; "
                    "100 random PSD instances, max |z - oracle| %.2e, non-optimal %d",
                    solves, kkt, viol, oracle_gap, not_optimal)};
}

Verdict synchronization(const Batch& b) {
  int triggers = 0;
  int nonzero = 0;
  int off_bound = 0;
  std::array<double, 3> overshoot{};  // e, e-rate, state drift
  for (const RunFacts& f : b.facts) {
    for (const EventRecord& e : f.events) {
      if (e.kind == EventKind::kTermination || e.kind == EventKind::kAbort) continue;
      ++triggers;
      if (e.post_sync_error != ErrorVector{}) ++nonzero;
      const EventKind c = e.cause;
      if (c == EventKind::kError || c == EventKind::kErrorRate || c == EventKind::kStateDrift) {
        // Crossed during the last micro-step: previous < bound <= value.
        const bool crossed = e.previous < e.bound && e.value >= e.bound;
        off_bound += !crossed;
        const std::size_t k = c == EventKind::kError ? 0 : c == EventKind::kErrorRate ? 1 : 2;
        overshoot[k] = std::max(overshoot[k], e.value - e.bound);
      }
    }
  }
  return {triggers > 0 && nonzero == 0 && off_bound == 0,
          fmt("%zu runs, %d updates, nonzero post-sync error %d, triggers not crossing within one micro-step %d, "
              "max overshoot past the bound: e %.3e, e-rate %.3e, drift %.3e",
              b.facts.size(), triggers, nonzero, off_bound, overshoot[0], overshoot[1], overshoot[2])};
}

Verdict human_study(const Batch& agg, const Batch& con, const Batch& hes) {
  const auto side = [](const Batch& b, MergeSide s) { return b.report.count(s); };
  const auto safety_ok = [](const Batch& b) {
    for (const RunResult& r : b.report.runs) {
      if (!(r.metrics.min_barrier[index(VehiclePair::kCH)] > 0.0)) return false;
    }
    return true;
  };
  const MeanStd ta = agg.report.t_f(), tc = con.report.t_f(), th = hes.report.t_f();
  const MeanStd ea = agg.report.energy(), ec = con.report.energy(), eh = hes.report.energy();
  const bool sides = side(agg, MergeSide::kBehind) == 10 && side(con, MergeSide::kAhead) == 10 &&
                     side(hes, MergeSide::kBehind) >= 1 && side(hes, MergeSide::kAhead) >= 1;
  const bool safe = safety_ok(agg) && safety_ok(con) && safety_ok(hes);
  const bool order = th.mean > ta.mean && th.mean > tc.mean && eh.mean > ea.mean && eh.mean > ec.mean;
  const auto row = [&](const char* name, const Batch& b, MeanStd t, MeanStd e) {
    return fmt("%s: B-HDV %zu A-HDV %zu complete %zu safety_min %.1f t_f %.2f (n=%zu) E %.2f", name,
               side(b, MergeSide::kBehind), side(b, MergeSide::kAhead), b.report.count(Outcome::kComplete),
               b.report.min_safety(), t.mean, t.n, e.mean);
  };
  return {sides && safe && order, row("aggressive", agg, ta, ea) + "; " + row("conservative", con, tc, ec) + "; " +
                                      row("hesitant", hes, th, eh)};
}

Verdict termination_contract(const std::vector<const Batch*>& batches) {
  int complete = 0;
  int abort = 0;
  int bad_complete = 0;
  int bad_abort = 0;
  int unfinished = 0;
  double worst_dy = 0.0;
  for (const Batch* b : batches) {
    for (const RunFacts& f : b->facts) {
      const double dt = kDefaultMicroStep;
      if (f.outcome == Outcome::kComplete) {
        ++complete;
        worst_dy = std::max(worst_dy, std::abs(f.y_c - 4.0));
        bad_complete += std::abs(f.y_c - 4.0) > 0.3 || f.t_f > f.t_final + dt;
      } else if (f.outcome == Outcome::kAbort) {
        ++abort;
        bad_abort += std::abs(f.t_f - f.t_final) > dt;
      } else {
        ++unfinished;
      }
    }
  }
  return {bad_complete == 0 && bad_abort == 0 && unfinished == 0 && complete > 0 && abort > 0,
          fmt("complete %d (max |y_C - 4| %.3f, out of contract %d), abort %d (not at 15 s %d), neither %d", complete,
              worst_dy, bad_complete, abort, bad_abort, unfinished)};
}

Verdict determinism() {
  int runs = 0;
  int differing = 0;
  for (ControlMode mode : {ControlMode::kEventDriven, ControlMode::kTimeDriven}) {
    for (PolicyKind kind : {PolicyKind::kRandom, PolicyKind::kHesitant}) {
      for (std::uint64_t seed : {1u, 7u}) {
        Scenario sc;
        sc.config.controller.mode = mode;
        sc.config.seed = seed;
        sc.policy.kind = kind;
        const std::string a = log_to_string(run_scenario(sc.config, sc.policy));
        const std::string b = log_to_string(run_scenario(sc.config, sc.policy));
        ++runs;
        differing += a != b;
      }
    }
  }

  // A scripted human session, replayed from its recorded commands.
  TrajectoryLog live;
  SessionCore core({}, {}, [&](const TrajectoryLog& log) { live = log; });
  core.start(Scenario{}, 0.0);
  Rng rng(909);
  int commands = 0;
  double t = 0.0;
  while (core.active()) {
    t += 1e-3;
    if (rng.canonical() < 0.01) {
      nlohmann::json msg{{"type", "control"}, {"u", rng.uniform(-4, 3)}, {"phi", rng.uniform(-0.06, 0.06)}};
      core.handle(msg.dump(), t);
      ++commands;
    }
    core.advance(t);
  }
  const Scenario replay = core.replay_scenario();
  const std::string replayed = log_to_string(run_scenario(replay.config, replay.policy));
  const bool session_ok = log_to_string(live) == replayed;
  std::istringstream in(replayed);
  const LoadedLog loaded = read_log(in);
  // The header embeds the schedule, which differs in form (commands vs applied controls); compare the records.
  const auto body = [](const std::string& log) { return log.substr(log.find('\n') + 1); };
  const bool reload_ok =
      body(log_to_string(run_scenario(loaded.scenario.config, recorded_policy(loaded)))) == body(replayed);
  return {differing == 0 && session_ok && reload_ok,
          fmt("%d repeated runs, byte-different %d; session with %d commands (%zu recorded) replays %s, "
              "re-read log replays %s after the header",
              runs, differing, commands, core.recorded_commands().size(), session_ok ? "byte-identical" : "DIFFERENT",
              reload_ok ? "byte-identical" : "DIFFERENT")};
}

}  // namespace
}  // namespace mixedlane

int main() {
  using namespace mixedlane;
  const Scenario base;
  std::fprintf(stderr, "running compare batch (3 cases x %d seeds)...\n", kSeeds);
  const Batch known = run_collecting(case_scenario(base, CompareCase::kTimeKnown), kSeeds, "case1");
  const Batch unknown = run_collecting(case_scenario(base, CompareCase::kTimeUnknown), kSeeds, "case2");
  const Batch event = run_collecting(case_scenario(base, CompareCase::kEvent), kSeeds, "case3");
  std::fprintf(stderr, "running sync batch and archetypes...\n");
  const Batch sync = run_collecting(base, 10, "sync", true);
  const Batch agg = run_collecting(archetype_scenario(base, PolicyKind::kAggressive), 10, "aggressive");
  const Batch con = run_collecting(archetype_scenario(base, PolicyKind::kConservative), 10, "conservative");
  const Batch hes = run_collecting(archetype_scenario(base, PolicyKind::kHesitant), 10, "hesitant");

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"event-driven safety", [&] { return event_driven_safety(event); }},
      {"time-driven violation",
       [&] { return time_driven_violation(known, unknown, case_scenario(base, CompareCase::kTimeKnown).config.controller.delta); }},
      {"point-box equivalence", point_box_equivalence},
      {"robust-min oracle", robust_min_oracle},
      {"lie-derivative consistency", lie_derivative_consistency},
      {"qp correctness", [&] { return qp_correctness({&known, &unknown, &event}); }},
      {"synchronization", [&] { return synchronization(sync); }},
      {"human-study qualitative reproduction", [&] { return human_study(agg, con, hes); }},
      {"termination contract", [&] { return termination_contract({&known, &unknown, &event, &sync, &agg, &con, &hes}); }},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const Verdict v = criteria[i].second();
    failed += !v.pass;
    std::printf("%s [%zu] %s: %s\n", v.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
