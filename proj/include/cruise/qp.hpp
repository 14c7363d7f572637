#pragma once

#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace cruise {

/// minimize 1/2 x'Hx + f'x  subject to  A x <= b,  E x = e.
struct QpProblem {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  Eigen::MatrixXd a_ineq;
  Eigen::VectorXd b_ineq;
  Eigen::MatrixXd a_eq;
  Eigen::VectorXd b_eq;

  /// Empty constraint blocks sized for `n` variables.
  static QpProblem unconstrained(const Eigen::MatrixXd& h, const Eigen::VectorXd& f);

  int variables() const { return static_cast<int>(linear.size()); }
  void validate() const;
  double objective(const Eigen::VectorXd& x) const;
};

enum class QpStatus { kOptimal, kInfeasible, kMaxIterations };

constexpr std::string_view to_string(QpStatus s) {
  switch (s) {
    case QpStatus::kOptimal: return "optimal";
    case QpStatus::kInfeasible: return "infeasible";
    case QpStatus::kMaxIterations: return "max_iterations";
  }
  return "unknown";
}

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_ineq;  // >= 0, H x + f + A' lambda + E' nu = 0
  Eigen::VectorXd nu_eq;
  QpStatus status = QpStatus::kInfeasible;
  int iterations = 0;
  std::vector<int> active;  // indices into the inequality rows
  double objective = 0.0;

  bool ok() const { return status == QpStatus::kOptimal; }
};

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;          // max constraint violation
  double dual = 0.0;            // max negative inequality multiplier
  double complementarity = 0.0; // max |lambda_i (a_i'x - b_i)|

  double max() const;
};

KktResiduals kkt_residuals(const QpProblem& problem, const QpSolution& solution);

struct QpOptions {
  int max_iterations = 0;      // 0 picks 10 (n + m) + 50
  double feasibility_tol = 1e-10;
  double proximal_weight = 1e-2;  // used only for singular Hessians
  int max_proximal_rounds = 5000;
};

/// Dual active-set method of Goldfarb and Idnani for positive definite
/// Hessians. Positive semidefinite Hessians are handled by an outer proximal
/// point loop around the same solver.
QpSolution solve_qp(const QpProblem& problem, const QpOptions& options = {});

}  // namespace cruise
