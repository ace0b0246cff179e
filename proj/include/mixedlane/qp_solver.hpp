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

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixedlane {

/// min ½ zᵀHz + fᵀz  s.t.  A z <= b,  lb <= z <= ub.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd lb;
  Eigen::VectorXd ub;

  QpProblem() = default;
  QpProblem(int n, int m)
      : H(Eigen::MatrixXd::Zero(n, n)),
        f(Eigen::VectorXd::Zero(n)),
        A(Eigen::MatrixXd::Zero(m, n)),
        b(Eigen::VectorXd::Zero(m)),
        lb(Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity())),
        ub(Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity())) {}

  int num_vars() const { return static_cast<int>(H.rows()); }
  int num_rows() const { return static_cast<int>(A.rows()); }

  void validate() const {
    const auto n = H.rows();
    if (n == 0) throw std::invalid_argument("QpProblem: empty decision vector");
    if (H.cols() != n || f.size() != n || A.cols() != n || lb.size() != n || ub.size() != n ||
        b.size() != A.rows()) {
      throw std::invalid_argument("QpProblem: inconsistent dimensions");
    }
    if (!H.isApprox(H.transpose(), 1e-12)) throw std::invalid_argument("QpProblem: H is not symmetric");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (lb(i) > ub(i)) throw std::invalid_argument("QpProblem: lb > ub at index " + std::to_string(i));
    }
  }
};

enum class QpStatus { kOptimal, kInfeasible, kMaxIter };

inline const char* to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kOptimal: return "optimal";
    case QpStatus::kInfeasible: return "infeasible";
    default: return "max_iter";
  }
}

struct QpSolution {
  Eigen::VectorXd z;
  QpStatus status{QpStatus::kMaxIter};
  double kkt_residual{std::numeric_limits<double>::infinity()};
  int iterations{0};
  double solve_time_s{0.0};
  /// Multipliers for A z <= b, z >= lb and z <= ub (all non-negative at optimum).
  Eigen::VectorXd lambda;
  Eigen::VectorXd lambda_lb;
  Eigen::VectorXd lambda_ub;
  /// Infeasibility certificate: non-negative weights y over (A rows, lb, ub) with
  /// yᵀ[A; -I; I] = 0 and yᵀ[b; -lb; ub] < 0. Empty unless status is infeasible, and empty when the
  /// verdict comes from the acceptance check on an ill-conditioned active set.
  Eigen::VectorXd certificate;
  /// Largest constraint violation at z.
  double max_violation{0.0};
};

struct KktReport {
  double stationarity{0.0};
  double primal{0.0};
  double dual{0.0};
  double complementarity{0.0};

  double worst() const { return std::max({stationarity, primal, dual, complementarity}); }
  bool ok(double tol) const { return worst() <= tol; }
};

/// Stationarity, primal/dual feasibility and complementary slackness residuals.
/// Stationarity is scaled by 1 + ‖f‖∞ + ‖Hz‖∞, primal feasibility by row norms,
/// and each complementarity product |λ·slack| by 1 + |λ|.
inline KktReport verify_kkt(const QpProblem& p, const QpSolution& s) {
  KktReport r;
  const Eigen::Index n = p.H.rows();
  const Eigen::VectorXd Hz = p.H * s.z;
  Eigen::VectorXd grad = Hz + p.f;
  if (p.A.rows() > 0) grad += p.A.transpose() * s.lambda;
  grad -= s.lambda_lb;
  grad += s.lambda_ub;
  const double scale = 1.0 + p.f.lpNorm<Eigen::Infinity>() + Hz.lpNorm<Eigen::Infinity>();
  r.stationarity = grad.lpNorm<Eigen::Infinity>() / scale;

  for (Eigen::Index i = 0; i < p.A.rows(); ++i) {
    const double rn = std::max(1.0, p.A.row(i).lpNorm<Eigen::Infinity>());
    const double slack = p.b(i) - p.A.row(i).dot(s.z);
    r.primal = std::max(r.primal, -slack / rn);
    r.dual = std::max(r.dual, -s.lambda(i));
    r.complementarity = std::max(r.complementarity, std::abs(s.lambda(i) * slack) / (rn * (1.0 + std::abs(s.lambda(i)))));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (std::isfinite(p.lb(j))) {
      const double slack = s.z(j) - p.lb(j);
      r.primal = std::max(r.primal, -slack);
      r.complementarity = std::max(r.complementarity, std::abs(s.lambda_lb(j) * slack) / (1.0 + std::abs(s.lambda_lb(j))));
    }
    if (std::isfinite(p.ub(j))) {
      const double slack = p.ub(j) - s.z(j);
      r.primal = std::max(r.primal, -slack);
      r.complementarity = std::max(r.complementarity, std::abs(s.lambda_ub(j) * slack) / (1.0 + std::abs(s.lambda_ub(j))));
    }
    r.dual = std::max({r.dual, -s.lambda_lb(j), -s.lambda_ub(j)});
  }
  return r;
}

struct QpSolverOptions {
  int max_iter{200};
  double feasibility_tol{1e-10};
  /// Proximal weight used when H is only semidefinite, relative to max diag(H).
  double proximal_weight{1e-3};
  int max_proximal_iter{2000};
  /// A constraint whose normal is this close (relative, squared) to the span of
  /// the active normals is treated as dependent.
  double dependence_tol{1e-8};
  /// An "optimal" point violating a constraint by more than this is reported
  /// infeasible (max-violation report, no certificate).
  double acceptance_tol{1e-6};
  /// Above this KKT residual the result is refined by a primal active-set pass.
  double polish_tol{1e-9};
};

/// Dual active-set solver (Goldfarb-Idnani) for small dense strictly convex QPs.
/// Semidefinite H is handled by proximal-point outer iterations over the
/// regularized problem. Not reentrant: one instance per thread.
class QpSolver {
 public:
  explicit QpSolver(QpSolverOptions opts = {}) : opts_(opts) {}

  QpSolution solve(const QpProblem& problem) {
    const auto start = std::chrono::steady_clock::now();
    problem.validate();
    build_constraints(problem);

    QpSolution sol;
    Eigen::LLT<Eigen::MatrixXd> llt(problem.H);
    const bool definite = llt.info() == Eigen::Success && min_pivot(llt) > 1e-9 * max_diag(problem.H);
    if (definite) {
      sol = solve_definite(problem.H, problem.f, problem);
    } else {
      sol = solve_proximal(problem);
    }
    sol.max_violation = max_violation(problem, sol.z);
    if (sol.status == QpStatus::kOptimal && sol.max_violation > opts_.acceptance_tol * (1.0 + rhs_scale(problem))) {
      sol.status = QpStatus::kInfeasible;
      sol.certificate.resize(0);
    }
    if (sol.status == QpStatus::kOptimal) {
      sol.kkt_residual = verify_kkt(problem, sol).worst();
      if (sol.kkt_residual > opts_.polish_tol) polish(problem, sol);
    }
    sol.solve_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return sol;
  }

  const QpSolverOptions& options() const { return opts_; }

 private:
  // Constraints in the form nᵀz >= r; kinds index back into A rows, lb, ub.
  enum class Kind { kRow, kLower, kUpper };
  struct Con {
    Kind kind;
    Eigen::Index source;
  };

  static double min_pivot(const Eigen::LLT<Eigen::MatrixXd>& llt) {
    const Eigen::MatrixXd L = llt.matrixL();
    return L.diagonal().cwiseAbs().minCoeff();
  }
  static double max_diag(const Eigen::MatrixXd& H) { return std::max(1.0, H.diagonal().cwiseAbs().maxCoeff()); }

  void build_constraints(const QpProblem& p) {
    const Eigen::Index n = p.H.rows();
    cons_.clear();
    for (Eigen::Index i = 0; i < p.A.rows(); ++i) cons_.push_back({Kind::kRow, i});
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::isfinite(p.lb(j))) cons_.push_back({Kind::kLower, j});
    }
    for (Eigen::Index j = 0; j < n; ++j) {
      if (std::isfinite(p.ub(j))) cons_.push_back({Kind::kUpper, j});
    }
    const auto m = static_cast<Eigen::Index>(cons_.size());
    N_.resize(n, m);
    rhs_.resize(m);
    N_.setZero();
    for (Eigen::Index c = 0; c < m; ++c) {
      const Con& con = cons_[static_cast<std::size_t>(c)];
      switch (con.kind) {
        case Kind::kRow:
          N_.col(c) = -p.A.row(con.source).transpose();
          rhs_(c) = -p.b(con.source);
          break;
        case Kind::kLower:
          N_(con.source, c) = 1.0;
          rhs_(c) = p.lb(con.source);
          break;
        case Kind::kUpper:
          N_(con.source, c) = -1.0;
          rhs_(c) = -p.ub(con.source);
          break;
      }
    }
    norms_ = N_.colwise().norm().transpose();
  }

  void scatter_multipliers(const QpProblem& p, const Eigen::VectorXd& u_all, QpSolution& sol) const {
    const Eigen::Index n = p.H.rows();
    sol.lambda = Eigen::VectorXd::Zero(p.A.rows());
    sol.lambda_lb = Eigen::VectorXd::Zero(n);
    sol.lambda_ub = Eigen::VectorXd::Zero(n);
    for (std::size_t c = 0; c < cons_.size(); ++c) {
      const double u = u_all(static_cast<Eigen::Index>(c));
      switch (cons_[c].kind) {
        case Kind::kRow: sol.lambda(cons_[c].source) = u; break;
        case Kind::kLower: sol.lambda_lb(cons_[c].source) = u; break;
        case Kind::kUpper: sol.lambda_ub(cons_[c].source) = u; break;
      }
    }
  }

  static double rhs_scale(const QpProblem& p) {
    double s = p.b.size() > 0 ? p.b.lpNorm<Eigen::Infinity>() : 0.0;
    for (Eigen::Index j = 0; j < p.lb.size(); ++j) {
      if (std::isfinite(p.lb(j))) s = std::max(s, std::abs(p.lb(j)));
      if (std::isfinite(p.ub(j))) s = std::max(s, std::abs(p.ub(j)));
    }
    return s;
  }

  static double max_violation(const QpProblem& p, const Eigen::VectorXd& z) {
    double v = 0.0;
    if (p.A.rows() > 0) v = std::max(v, (p.A * z - p.b).maxCoeff());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      if (std::isfinite(p.lb(j))) v = std::max(v, p.lb(j) - z(j));
      if (std::isfinite(p.ub(j))) v = std::max(v, z(j) - p.ub(j));
    }
    return std::max(v, 0.0);
  }

  QpSolution solve_definite(const Eigen::MatrixXd& G, const Eigen::VectorXd& f, const QpProblem& p) {
    const Eigen::Index n = G.rows();
    const auto m = static_cast<Eigen::Index>(cons_.size());
    const Eigen::MatrixXd Ginv = G.llt().solve(Eigen::MatrixXd::Identity(n, n));

    QpSolution sol;
    Eigen::VectorXd z = -Ginv * f;
    Eigen::VectorXd u_all = Eigen::VectorXd::Zero(m);
    std::vector<Eigen::Index> active;
    std::vector<double> u;  // multipliers of active, same order
    int iter = 0;

    const auto finish = [&](QpStatus st) {
      Eigen::VectorXd full = Eigen::VectorXd::Zero(m);
      for (std::size_t k = 0; k < active.size(); ++k) full(active[k]) = u[k];
      sol.z = z;
      sol.status = st;
      sol.iterations = iter;
      scatter_multipliers(p, full, sol);
      return sol;
    };

    while (true) {
      // Pick the most violated constraint (normalized), lowest index on ties.
      Eigen::Index pick = -1;
      double worst = 0.0;
      for (Eigen::Index c = 0; c < m; ++c) {
        if (std::find(active.begin(), active.end(), c) != active.end()) continue;
        if (norms_(c) == 0.0) {
          if (rhs_(c) > opts_.feasibility_tol * std::max(1.0, std::abs(rhs_(c)))) {
            // 0 >= positive: infeasible on its own.
            sol.certificate = certificate_for(p, c, {}, {});
            return finish(QpStatus::kInfeasible);
          }
          continue;
        }
        const double slack = N_.col(c).dot(z) - rhs_(c);
        const double tol = opts_.feasibility_tol * std::max(1.0, std::abs(rhs_(c)));
        if (slack < -tol) {
          const double scaled = slack / norms_(c);
          if (pick < 0 || scaled < worst) {
            pick = c;
            worst = scaled;
          }
        }
      }
      if (pick < 0) return finish(QpStatus::kOptimal);

      double u_new = 0.0;
      const Eigen::VectorXd np = N_.col(pick);
      while (true) {
        if (++iter > opts_.max_iter) return finish(QpStatus::kMaxIter);
        const auto q = static_cast<Eigen::Index>(active.size());
        const Eigen::VectorXd Gn = Ginv * np;
        Eigen::VectorXd r(q);
        Eigen::VectorXd step = Gn;
        if (q > 0) {
          Eigen::MatrixXd Na(n, q);
          for (Eigen::Index k = 0; k < q; ++k) Na.col(k) = N_.col(active[static_cast<std::size_t>(k)]);
          const Eigen::MatrixXd GN = Ginv * Na;
          const Eigen::MatrixXd M = Na.transpose() * GN;
          r = M.ldlt().solve(Na.transpose() * Gn);
          step -= GN * r;
        }

        double t1 = std::numeric_limits<double>::infinity();
        Eigen::Index drop = -1;
        for (Eigen::Index k = 0; k < q; ++k) {
          if (r(k) > 0.0) {
            const double ratio = u[static_cast<std::size_t>(k)] / r(k);
            if (ratio < t1) {
              t1 = ratio;
              drop = k;
            }
          }
        }
        double t2 = std::numeric_limits<double>::infinity();
        // step·n = ‖projected n‖² in the G⁻¹ metric; relative to ‖n‖² it measures
        // how far n is from the span of the active normals.
        const double curvature = step.dot(np);
        const bool zero_step = curvature <= opts_.dependence_tol * Gn.dot(np);
        if (!zero_step && curvature > 0.0) {
          const double slack = np.dot(z) - rhs_(pick);
          t2 = std::max(0.0, -slack / curvature);
        }
        const double t = std::min(t1, t2);
        if (!std::isfinite(t)) {
          std::vector<Eigen::Index> act(active.begin(), active.end());
          sol.certificate = certificate_for(p, pick, act, std::vector<double>(r.data(), r.data() + r.size()));
          return finish(QpStatus::kInfeasible);
        }
        for (Eigen::Index k = 0; k < q; ++k) u[static_cast<std::size_t>(k)] -= t * r(k);
        u_new += t;
        if (std::isfinite(t2)) z += t * step;
        if (t2 <= t1) {
          active.push_back(pick);
          u.push_back(u_new);
          break;
        }
        active.erase(active.begin() + drop);
        u.erase(u.begin() + drop);
      }
    }
  }

  // Primal active-set refinement from the (feasible) dual active-set point.
  // Ill-conditioned active sets can leave that point slightly off the optimum;
  // the primal iteration keeps feasibility and repairs stationarity.
  void polish(const QpProblem& p, QpSolution& sol) const {
    const Eigen::Index n = p.H.rows();
    const auto m = static_cast<Eigen::Index>(cons_.size());
    const Eigen::MatrixXd& G = p.H;
    Eigen::VectorXd z = sol.z;
    const auto slack = [&](Eigen::Index c) { return N_.col(c).dot(z) - rhs_(c); };
    const auto tol_of = [&](Eigen::Index c) { return 1e-9 * std::max(1.0, std::abs(rhs_(c))); };
    const auto independent = [&](const std::vector<Eigen::Index>& w, Eigen::Index c) {
      Eigen::MatrixXd M(n, static_cast<Eigen::Index>(w.size()) + 1);
      for (std::size_t k = 0; k < w.size(); ++k) M.col(static_cast<Eigen::Index>(k)) = N_.col(w[k]) / norms_(w[k]);
      M.col(M.cols() - 1) = N_.col(c) / norms_(c);
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(M);
      qr.setThreshold(1e-10);
      return qr.rank() == M.cols();
    };

    std::vector<Eigen::Index> work;
    for (Eigen::Index c = 0; c < m; ++c) {
      if (norms_(c) > 0.0 && slack(c) <= tol_of(c) && independent(work, c)) work.push_back(c);
    }

    Eigen::VectorXd u;
    bool converged = false;
    for (int it = 0; it < 4 * opts_.max_iter && !converged; ++it) {
      const auto q = static_cast<Eigen::Index>(work.size());
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(n + q, n + q);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + q);
      K.topLeftCorner(n, n) = G;
      rhs.head(n) = -(G * z + p.f);
      for (Eigen::Index k = 0; k < q; ++k) {
        const Eigen::VectorXd nc = N_.col(work[static_cast<std::size_t>(k)]);
        K.block(0, n + k, n, 1) = -nc;
        K.block(n + k, 0, 1, n) = nc.transpose();
      }
      const Eigen::FullPivLU<Eigen::MatrixXd> lu(K);
      if (!lu.isInvertible()) return;
      Eigen::VectorXd x = lu.solve(rhs);
      x += lu.solve(rhs - K * x);
      const Eigen::VectorXd step = x.head(n);
      u = x.tail(q);

      if (step.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + z.lpNorm<Eigen::Infinity>())) {
        if (q == 0 || u.minCoeff() >= -1e-12 * (1.0 + u.cwiseAbs().maxCoeff())) {
          converged = true;
          break;
        }
        Eigen::Index drop = 0;
        u.minCoeff(&drop);
        work.erase(work.begin() + drop);
        continue;
      }

      double alpha = 1.0;
      Eigen::Index block = -1;
      for (Eigen::Index c = 0; c < m; ++c) {
        if (std::find(work.begin(), work.end(), c) != work.end() || norms_(c) == 0.0) continue;
        const double rate = N_.col(c).dot(step);
        if (rate >= -1e-14 * norms_(c) * step.norm()) continue;
        const double a = std::max(0.0, slack(c)) / -rate;
        if (a < alpha) {
          alpha = a;
          block = c;
        }
      }
      z += alpha * step;
      if (block >= 0) {
        if (!independent(work, block)) return;
        work.push_back(block);
      }
    }
    if (!converged) return;

    QpSolution cand = sol;
    cand.z = z;
    Eigen::VectorXd full = Eigen::VectorXd::Zero(m);
    for (std::size_t k = 0; k < work.size(); ++k) full(work[k]) = std::max(0.0, u(static_cast<Eigen::Index>(k)));
    scatter_multipliers(p, full, cand);
    cand.max_violation = max_violation(p, cand.z);
    cand.kkt_residual = verify_kkt(p, cand).worst();
    if (cand.max_violation <= opts_.acceptance_tol * (1.0 + rhs_scale(p)) && cand.kkt_residual < sol.kkt_residual) {
      sol = std::move(cand);
    }
  }

  // Farkas weights over (A rows, lb, ub): picked constraint with weight 1 and
  // active ones with -r_j >= 0.
  Eigen::VectorXd certificate_for(const QpProblem& p, Eigen::Index pick, const std::vector<Eigen::Index>& active,
                                  const std::vector<double>& r) const {
    const Eigen::Index n = p.H.rows();
    Eigen::VectorXd y = Eigen::VectorXd::Zero(p.A.rows() + 2 * n);
    const auto place = [&](Eigen::Index c, double w) {
      const Con& con = cons_[static_cast<std::size_t>(c)];
      switch (con.kind) {
        case Kind::kRow: y(con.source) += w; break;
        case Kind::kLower: y(p.A.rows() + con.source) += w; break;
        case Kind::kUpper: y(p.A.rows() + n + con.source) += w; break;
      }
    };
    place(pick, 1.0);
    for (std::size_t k = 0; k < active.size(); ++k) place(active[k], std::max(0.0, -r[k]));
    return y;
  }

  QpSolution solve_proximal(const QpProblem& p) {
    const Eigen::Index n = p.H.rows();
    const double rho = opts_.proximal_weight * max_diag(p.H);
    const Eigen::MatrixXd G = p.H + rho * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd z = Eigen::VectorXd::Zero(n);
    QpSolution sol;
    int total = 0;
    for (int k = 0; k < opts_.max_proximal_iter; ++k) {
      sol = solve_definite(G, p.f - rho * z, p);
      total += sol.iterations;
      if (sol.status != QpStatus::kOptimal) break;
      const double move = (sol.z - z).lpNorm<Eigen::Infinity>();
      z = sol.z;
      if (move <= 1e-13 * std::max(1.0, z.lpNorm<Eigen::Infinity>())) break;
    }
    sol.iterations = total;
    // The proximal term's gradient vanishes at the fixed point; multipliers carry over.
    return sol;
  }

  QpSolverOptions opts_;
  std::vector<Con> cons_;
  Eigen::MatrixXd N_;
  Eigen::VectorXd rhs_;
  Eigen::VectorXd norms_;
};

}  // namespace mixedlane
