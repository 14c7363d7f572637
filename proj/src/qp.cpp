#include "cruise/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cruise/error.hpp"

namespace cruise {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ActiveRow {
  int id;    // inequality row, or -1 - j for equality row j
  double u;  // multiplier in the n'x >= b form
};

// Strictly convex core. Inequalities are handled as n_i'x >= c_i with
// n_i = -A_i and c_i = -b_i so that stationarity reads G x + f = N u.
QpSolution goldfarb_idnani(const Eigen::MatrixXd& g, const Eigen::VectorXd& f,
                           const QpProblem& p, const QpOptions& opt) {
  const int n = static_cast<int>(f.size());
  const int m = static_cast<int>(p.b_ineq.size());
  const int me = static_cast<int>(p.b_eq.size());
  const int max_iter = opt.max_iterations > 0 ? opt.max_iterations : 10 * (n + m + me) + 50;

  QpSolution sol;
  sol.lambda_ineq = Eigen::VectorXd::Zero(m);
  sol.nu_eq = Eigen::VectorXd::Zero(me);
  std::vector<ActiveRow> active;

  auto normal = [&](int id) -> Eigen::VectorXd {
    if (id >= 0) return -p.a_ineq.row(id).transpose();
    return p.a_eq.row(-1 - id).transpose();
  };

  // Equality-constrained start.
  Eigen::VectorXd x;
  if (me == 0) {
    x = g.llt().solve(-f);
  } else {
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + me, n + me);
    kkt.topLeftCorner(n, n) = g;
    kkt.topRightCorner(n, me) = -p.a_eq.transpose();
    kkt.bottomLeftCorner(me, n) = p.a_eq;
    Eigen::VectorXd rhs(n + me);
    rhs << -f, p.b_eq;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (lu.rank() < n + me) {
      sol.x = Eigen::VectorXd::Zero(n);
      sol.status = QpStatus::kInfeasible;
      return sol;
    }
    const Eigen::VectorXd z = lu.solve(rhs);
    x = z.head(n);
    for (int j = 0; j < me; ++j) active.push_back({-1 - j, z(n + j)});
  }

  const Eigen::LLT<Eigen::MatrixXd> g_llt(g);
  int iter = 0;
  // Re-solves the KKT system of the final working set to shed the rounding
  // accumulated over the dual steps.
  auto refine = [&]() {
    const int q = static_cast<int>(active.size());
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + q, n + q);
    kkt.topLeftCorner(n, n) = g;
    Eigen::VectorXd rhs(n + q);
    rhs.head(n) = -f;
    for (int k = 0; k < q; ++k) {
      const Eigen::VectorXd nk = normal(active[k].id);
      kkt.block(0, n + k, n, 1) = -nk;
      kkt.block(n + k, 0, 1, n) = nk.transpose();
      rhs(n + k) = active[k].id >= 0 ? -p.b_ineq(active[k].id) : p.b_eq(-1 - active[k].id);
    }
    const Eigen::VectorXd z = kkt.fullPivLu().solve(rhs);
    if (!z.allFinite()) return;
    for (int k = 0; k < q; ++k) {
      if (active[k].id >= 0 && z(n + k) < -1e-9 * std::max(1.0, std::abs(active[k].u))) return;
    }
    x = z.head(n);
    for (int k = 0; k < q; ++k) {
      active[k].u = active[k].id >= 0 ? std::max(0.0, z(n + k)) : z(n + k);
    }
  };
  auto finish = [&](QpStatus status) {
    if (status == QpStatus::kOptimal && !active.empty()) refine();
    sol.x = x;
    sol.status = status;
    sol.iterations = iter;
    for (const auto& a : active) {
      if (a.id >= 0) {
        sol.lambda_ineq(a.id) = a.u;
        sol.active.push_back(a.id);
      } else {
        sol.nu_eq(-1 - a.id) = -a.u;
      }
    }
    std::sort(sol.active.begin(), sol.active.end());
    sol.objective = p.objective(x);
    return sol;
  };

  std::vector<char> is_active(m, 0);
  while (true) {
    // Most violated inactive inequality.
    int add = -1;
    double worst = -opt.feasibility_tol;
    for (int i = 0; i < m; ++i) {
      if (is_active[i]) continue;
      const double slack = p.b_ineq(i) - p.a_ineq.row(i).dot(x);
      if (slack < worst) {
        worst = slack;
        add = i;
      }
    }
    if (add < 0) return finish(QpStatus::kOptimal);

    const Eigen::VectorXd n_plus = normal(add);
    const double c_plus = -p.b_ineq(add);
    // Curvature of the new normal with no constraint active; the projected
    // curvature relative to it measures linear dependence on the active set.
    const double free_curvature = n_plus.dot(g_llt.solve(n_plus));
    double u_plus = 0.0;

    while (true) {
      if (++iter > max_iter) return finish(QpStatus::kMaxIterations);
      const int q = static_cast<int>(active.size());
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(n + q, n + q);
      kkt.topLeftCorner(n, n) = g;
      for (int k = 0; k < q; ++k) {
        const Eigen::VectorXd nk = normal(active[k].id);
        kkt.block(0, n + k, n, 1) = nk;
        kkt.block(n + k, 0, 1, n) = nk.transpose();
      }
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + q);
      rhs.head(n) = n_plus;
      const Eigen::VectorXd zr = kkt.fullPivLu().solve(rhs);
      const Eigen::VectorXd z = zr.head(n);
      const Eigen::VectorXd r = zr.tail(q);

      // Partial step: largest dual step keeping active multipliers >= 0.
      double t1 = kInf;
      int drop = -1;
      for (int k = 0; k < q; ++k) {
        if (active[k].id < 0 || r(k) <= 1e-12) continue;
        const double ratio = active[k].u / r(k);
        if (ratio < t1) {
          t1 = ratio;
          drop = k;
        }
      }
      // Full step: makes the new constraint active.
      const double zn = z.dot(n_plus);
      double t2 = kInf;
      if (zn > 1e-10 * free_curvature) {
        t2 = (c_plus - n_plus.dot(x)) / zn;
      }

      if (t1 == kInf && t2 == kInf) return finish(QpStatus::kInfeasible);

      const double t = std::min(t1, t2);
      if (t2 < kInf) x += t * z;
      for (int k = 0; k < q; ++k) active[k].u -= t * r(k);
      u_plus += t;

      if (t2 <= t1) {
        active.push_back({add, u_plus});
        is_active[add] = 1;
        break;
      }
      is_active[active[drop].id] = 0;
      active.erase(active.begin() + drop);
    }
  }
}

// Well conditioned enough for the dual method without regularization.
bool positive_definite(const Eigen::MatrixXd& h) {
  if (h.rows() == 0) return true;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h, Eigen::EigenvaluesOnly);
  const double top = std::max(1.0, eig.eigenvalues().maxCoeff());
  return eig.eigenvalues().minCoeff() > 1e-9 * top;
}

}  // namespace

QpProblem QpProblem::unconstrained(const Eigen::MatrixXd& h, const Eigen::VectorXd& f) {
  const auto n = f.size();
  return {h, f, Eigen::MatrixXd(0, n), Eigen::VectorXd(0), Eigen::MatrixXd(0, n),
          Eigen::VectorXd(0)};
}

void QpProblem::validate() const {
  const auto n = linear.size();
  if (hessian.rows() != n || hessian.cols() != n || a_ineq.cols() != n ||
      a_ineq.rows() != b_ineq.size() || a_eq.cols() != n || a_eq.rows() != b_eq.size()) {
    throw Error(ErrorCode::kShapeMismatch, "QP dimensions are inconsistent");
  }
  if ((hessian - hessian.transpose()).cwiseAbs().maxCoeff() >
      1e-10 * std::max(1.0, hessian.cwiseAbs().maxCoeff())) {
    throw Error(ErrorCode::kParameter, "QP Hessian is not symmetric");
  }
}

double QpProblem::objective(const Eigen::VectorXd& x) const {
  return 0.5 * x.dot(hessian * x) + linear.dot(x);
}

double KktResiduals::max() const {
  return std::max({stationarity, primal, dual, complementarity});
}

KktResiduals kkt_residuals(const QpProblem& p, const QpSolution& s) {
  KktResiduals k;
  Eigen::VectorXd grad = p.hessian * s.x + p.linear;
  if (p.b_ineq.size() > 0) grad += p.a_ineq.transpose() * s.lambda_ineq;
  if (p.b_eq.size() > 0) grad += p.a_eq.transpose() * s.nu_eq;
  k.stationarity = grad.size() ? grad.cwiseAbs().maxCoeff() : 0.0;
  for (int i = 0; i < p.b_ineq.size(); ++i) {
    const double viol = p.a_ineq.row(i).dot(s.x) - p.b_ineq(i);
    k.primal = std::max(k.primal, viol);
    k.dual = std::max(k.dual, -s.lambda_ineq(i));
    k.complementarity = std::max(k.complementarity, std::abs(s.lambda_ineq(i) * viol));
  }
  for (int j = 0; j < p.b_eq.size(); ++j) {
    k.primal = std::max(k.primal, std::abs(p.a_eq.row(j).dot(s.x) - p.b_eq(j)));
  }
  return k;
}

QpSolution solve_qp(const QpProblem& problem, const QpOptions& options) {
  problem.validate();
  if (positive_definite(problem.hessian)) {
    return goldfarb_idnani(problem.hessian, problem.linear, problem, options);
  }

  // Proximal point: each round solves a strictly convex problem centered on
  // the previous iterate; fixed points are solutions of the original problem.
  const int n = problem.variables();
  const double rho = options.proximal_weight * std::max(1.0, problem.hessian.norm());
  const Eigen::MatrixXd g = problem.hessian + rho * Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd center = Eigen::VectorXd::Zero(n);
  QpSolution sol;
  int total = 0;
  for (int round = 0; round < options.max_proximal_rounds; ++round) {
    sol = goldfarb_idnani(g, problem.linear - rho * center, problem, options);
    total += sol.iterations;
    if (!sol.ok()) break;
    const double move = (sol.x - center).cwiseAbs().maxCoeff();
    center = sol.x;
    if (rho * move <= 1e-11) break;
    if (round + 1 == options.max_proximal_rounds) sol.status = QpStatus::kMaxIterations;
  }
  sol.iterations = total;
  sol.objective = problem.objective(sol.x);
  return sol;
}

}  // namespace cruise
