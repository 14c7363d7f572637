#include "cruise/motion_control.hpp"

#include <algorithm>
#include <cmath>

#include "cruise/error.hpp"

namespace cruise {

namespace {

constexpr int kLateralStates = 4;
// Rows of the full model kept by the lateral subsystem: Vy, yaw rate, yaw, Y.
constexpr std::array<int, kLateralStates> kLateralIndex{1, 3, 2, 5};

void check_level(int level) {
  if (level < 1 || level > 3) throw Error(ErrorCode::kRange, "preset level must be 1, 2 or 3");
}

// Appends rows `a x <= b`; rows with a zero normal are checked directly and
// dropped when satisfied. Returns false when such a row is violated.
bool append_rows(std::vector<Eigen::RowVectorXd>& rows, std::vector<double>& rhs,
                 const Eigen::RowVectorXd& a, double b) {
  if (a.cwiseAbs().maxCoeff() < 1e-14) return b >= -1e-9;
  rows.push_back(a);
  rhs.push_back(b);
  return true;
}

QpProblem assemble(Eigen::MatrixXd h, Eigen::VectorXd f,
                   const std::vector<Eigen::RowVectorXd>& rows, const std::vector<double>& rhs,
                   bool feasible) {
  const auto n = f.size();
  QpProblem p = QpProblem::unconstrained(0.5 * (h + h.transpose()), f);
  const auto m = static_cast<Eigen::Index>(rows.size()) + (feasible ? 0 : 1);
  p.a_ineq = Eigen::MatrixXd::Zero(m, n);
  p.b_ineq = Eigen::VectorXd::Zero(m);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(rows.size()); ++i) {
    p.a_ineq.row(i) = rows[i];
    p.b_ineq(i) = rhs[i];
  }
  if (!feasible) {
    // Encodes 0 <= -1 so the solver reports infeasibility consistently.
    p.a_ineq.row(m - 1).setZero();
    p.a_ineq(m - 1, 0) = 1.0;
    p.b_ineq(m - 1) = -1.0;
    Eigen::RowVectorXd neg = Eigen::RowVectorXd::Zero(n);
    neg(0) = -1.0;
    p.a_ineq.conservativeResize(m + 1, Eigen::NoChange);
    p.b_ineq.conservativeResize(m + 1);
    p.a_ineq.row(m) = neg;
    p.b_ineq(m) = 0.0;
  }
  return p;
}

MpcOutcome outcome_from(const QpSolution& s, int horizon) {
  MpcOutcome o;
  o.status = s.status;
  o.iterations = s.iterations;
  o.active_constraints = static_cast<int>(s.active.size());
  o.horizon = horizon;
  o.cost = s.objective;
  if (s.status != QpStatus::kInfeasible && s.x.size() > 0) o.command = s.x(0);
  return o;
}

}  // namespace

void MpcWeights::validate() const {
  if (!(p1 > 0 && r1 > 0 && p21 > 0 && p22 > 0 && r2 > 0)) {
    throw Error(ErrorCode::kConfig, "MPC weights must be positive");
  }
}

MpcWeights WeightPresets::keeping(int level) const {
  check_level(level);
  MpcWeights w;
  w.p1 = p1[level - 1];
  w.r1 = r1_ratio * w.p1;
  return w;
}

MpcWeights WeightPresets::changing(int level) const {
  check_level(level);
  MpcWeights w;
  w.p21 = p21[level - 1];
  w.p22 = p22_ratio * w.p21;
  w.r2 = r2[level - 1];
  return w;
}

MpcWeights WeightPresets::combined(int level) const {
  MpcWeights w = changing(level);
  const MpcWeights k = keeping(level);
  w.p1 = k.p1;
  w.r1 = k.r1;
  return w;
}

void ControlLimits::validate() const {
  if (!(ax_min < ax_max && steer_min < steer_max && vx_min < vx_max)) {
    throw Error(ErrorCode::kConfig, "control limits need min < max");
  }
  if (horizon < 2) throw Error(ErrorCode::kConfig, "prediction horizon must be at least 2");
  if (!(period > 0.0) || safe_gap < 0.0) {
    throw Error(ErrorCode::kConfig, "invalid control period or safe gap");
  }
}

QpProblem lane_keeping_problem(double vx, double a_ref,
                               const std::optional<LeaderPrediction>& leader,
                               const MpcWeights& w, const ControlLimits& lim) {
  const int n = lim.horizon;
  const double t = lim.period;
  // Speed after step k: V0 + T * sum_{j<k} a_j.
  const Eigen::MatrixXd lower =
      Eigen::MatrixXd::Ones(n, n).triangularView<Eigen::Lower>().toDenseMatrix();
  const Eigen::MatrixXd sv = t * lower;

  Eigen::MatrixXd h = 2.0 * (w.p1 * sv.transpose() * sv +
                             w.r1 * Eigen::MatrixXd::Identity(n, n));
  Eigen::VectorXd f = 2.0 * (w.p1 * sv.transpose() * Eigen::VectorXd::Constant(n, vx - lim.vx_max) -
                             w.r1 * Eigen::VectorXd::Constant(n, a_ref));

  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  bool feasible = true;
  const double v_hi = std::max(lim.vx_max, vx);
  const double v_lo = std::min(lim.vx_min, vx);
  for (int k = 0; k < n; ++k) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(n);
    e(k) = 1.0;
    append_rows(rows, rhs, e, lim.ax_max);
    append_rows(rows, rhs, -e, -lim.ax_min);
  }
  for (int k = 0; k < n; ++k) {
    append_rows(rows, rhs, sv.row(k), v_hi - vx);
    append_rows(rows, rhs, -sv.row(k), vx - v_lo);
  }
  if (leader) {
    // Gap after step k (1-based): gap0 + k T (V_lead - V0) - T^2 sum_i (k-1-i) a_i.
    for (int k = 1; k <= n; ++k) {
      Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(n);
      for (int i = 0; i + 1 < k; ++i) a(i) = t * t * (k - 1 - i);
      const double b = leader->gap + k * t * (leader->speed - vx) - lim.safe_gap;
      feasible = append_rows(rows, rhs, a, b) && feasible;
      if (k == n && lim.terminal_braking) {
        // Braking distance d^2 / (2 |ax_min|) with d = V_n - V_lead is bounded
        // by the secant d * d_max / (2 |ax_min|) on [0, d_max], which keeps the
        // row linear and conservative.
        const double d_max = vx + n * t * lim.ax_max - leader->speed;
        if (d_max > 0.0) {
          const double c = d_max / (2.0 * std::abs(lim.ax_min));
          feasible = append_rows(rows, rhs, a + c * sv.row(n - 1),
                                 b - c * (vx - leader->speed)) && feasible;
        }
      }
    }
  }
  return assemble(std::move(h), std::move(f), rows, rhs, feasible);
}

MpcOutcome lane_keeping_mpc(double vx, double a_ref,
                            const std::optional<LeaderPrediction>& leader,
                            const MpcWeights& weights, const ControlLimits& limits) {
  const QpProblem p = lane_keeping_problem(vx, a_ref, leader, weights, limits);
  const QpSolution s = solve_qp(p);
  MpcOutcome o = outcome_from(s, limits.horizon);
  if (s.status == QpStatus::kInfeasible) {
    o.command = limits.ax_min;
    o.fallback = true;
  }
  o.command = std::clamp(o.command, limits.ax_min, limits.ax_max);
  return o;
}

StabilityBounds stability_bounds(double vx, const VehicleParams& p) {
  if (!(vx > kMinSpeed)) {
    throw Error(ErrorCode::kDegenerateSpeed, "stability bounds need a positive speed");
  }
  const double wheelbase = p.lf + p.lr;
  const double weight = p.mu * p.mass * p.g;
  return {p.mu * p.g / vx, std::atan(weight * p.lr / (2.0 * p.kf * wheelbase)),
          std::atan(weight * p.lf / (2.0 * p.kr * wheelbase))};
}

LateralReference path_reference(const CandidatePath& path, double elapsed, int horizon,
                                double period) {
  LateralReference ref;
  ref.heading.resize(horizon);
  ref.y.resize(horizon);
  for (int k = 0; k < horizon; ++k) {
    const double t = elapsed + (k + 1) * period;
    if (t >= path.duration) {
      ref.heading[k] = 0.0;
      ref.y[k] = path.y0 + path.lateral;
    } else {
      const ReferenceState r = reference_states(path, std::max(0.0, t));
      ref.heading[k] = r.heading;
      ref.y[k] = path.y0 + r.y;
    }
  }
  return ref;
}

LateralReference lane_reference(double y, int horizon) {
  return {std::vector<double>(horizon, 0.0), std::vector<double>(horizon, y)};
}

QpProblem lateral_problem(const VehicleState& state, const LateralReference& ref,
                          const MpcWeights& w, const ControlLimits& lim,
                          const VehicleParams& params, int horizon) {
  if (static_cast<int>(ref.y.size()) < horizon || static_cast<int>(ref.heading.size()) < horizon) {
    throw Error(ErrorCode::kShapeMismatch, "lateral reference shorter than the horizon");
  }
  const LinearModel full = continuous_matrices(state, params);
  LinearModel lat{Eigen::MatrixXd(kLateralStates, kLateralStates),
                  Eigen::MatrixXd(kLateralStates, 1)};
  for (int i = 0; i < kLateralStates; ++i) {
    for (int j = 0; j < kLateralStates; ++j) lat.a(i, j) = full.a(kLateralIndex[i], kLateralIndex[j]);
    lat.b(i, 0) = full.b(kLateralIndex[i], 1);
  }
  const LinearModel d = discretize_exact(lat, lim.period);

  const int n = horizon;
  Eigen::Vector4d x0(state.vy, state.yaw_rate, state.yaw, state.y);
  // Stacked prediction x_k = phi_k x0 + gam_k u, k = 1..n.
  Eigen::MatrixXd phi(kLateralStates * n, kLateralStates);
  Eigen::MatrixXd gam = Eigen::MatrixXd::Zero(kLateralStates * n, n);
  Eigen::MatrixXd power = Eigen::MatrixXd::Identity(kLateralStates, kLateralStates);
  std::vector<Eigen::MatrixXd> impulse;  // A^j B
  impulse.reserve(n);
  for (int k = 0; k < n; ++k) {
    impulse.push_back(power * d.b);
    power = d.a * power;
    phi.block(kLateralStates * k, 0, kLateralStates, kLateralStates) = power;
    for (int j = 0; j <= k; ++j) {
      gam.block(kLateralStates * k, j, kLateralStates, 1) = impulse[k - j];
    }
  }
  const Eigen::VectorXd free = phi * x0;
  auto row_of = [&](int k, int s) { return kLateralStates * k + s; };

  Eigen::MatrixXd h = 2.0 * w.r2 * Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  for (int k = 0; k < n; ++k) {
    const Eigen::RowVectorXd gh = gam.row(row_of(k, 2));
    const Eigen::RowVectorXd gy = gam.row(row_of(k, 3));
    h += 2.0 * (w.p21 * gh.transpose() * gh + w.p22 * gy.transpose() * gy);
    f += 2.0 * (w.p21 * (free(row_of(k, 2)) - ref.heading[k]) * gh.transpose() +
                w.p22 * (free(row_of(k, 3)) - ref.y[k]) * gy.transpose());
  }

  const StabilityBounds sb = stability_bounds(state.vx, params);
  const double vx = state.vx;
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  bool feasible = true;
  auto both_sides = [&](const Eigen::RowVectorXd& a, double offset, double bound) {
    // |a u + offset| <= bound
    feasible = append_rows(rows, rhs, a, bound - offset) && feasible;
    feasible = append_rows(rows, rhs, -a, bound + offset) && feasible;
  };
  for (int k = 0; k < n; ++k) {
    Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(n);
    e(k) = 1.0;
    append_rows(rows, rhs, e, lim.steer_max);
    append_rows(rows, rhs, -e, -lim.steer_min);
  }
  for (int k = 0; k < n; ++k) {
    const Eigen::RowVectorXd g_vy = gam.row(row_of(k, 0));
    const Eigen::RowVectorXd g_r = gam.row(row_of(k, 1));
    const double f_vy = free(row_of(k, 0));
    const double f_r = free(row_of(k, 1));
    both_sides(g_r, f_r, sb.yaw_rate);
    both_sides((g_vy - params.lr * g_r) / vx, (f_vy - params.lr * f_r) / vx, sb.rear_slip);
  }
  // Front slip pairs the state at step k with the input applied at step k.
  for (int k = 0; k < n; ++k) {
    Eigen::RowVectorXd a = Eigen::RowVectorXd::Zero(n);
    double offset;
    if (k == 0) {
      offset = (state.vy + params.lf * state.yaw_rate) / vx;
    } else {
      a = (gam.row(row_of(k - 1, 0)) + params.lf * gam.row(row_of(k - 1, 1))) / vx;
      offset = (free(row_of(k - 1, 0)) + params.lf * free(row_of(k - 1, 1))) / vx;
    }
    a(k) -= 1.0;
    both_sides(a, offset, sb.front_slip);
  }
  return assemble(std::move(h), std::move(f), rows, rhs, feasible);
}

MpcOutcome lateral_mpc(const VehicleState& state, const LateralReference& ref,
                       const MpcWeights& weights, const ControlLimits& limits,
                       const VehicleParams& params) {
  int horizon = limits.horizon;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const QpProblem p = lateral_problem(state, ref, weights, limits, params, horizon);
    const QpSolution s = solve_qp(p);
    if (s.status != QpStatus::kInfeasible) {
      MpcOutcome o = outcome_from(s, horizon);
      o.command = std::clamp(o.command, limits.steer_min, limits.steer_max);
      return o;
    }
    horizon = std::max(1, horizon / 2);
  }
  MpcOutcome o;
  o.status = QpStatus::kInfeasible;
  o.fallback = true;
  o.horizon = horizon;
  return o;
}

MpcOutcome lane_changing_mpc(const VehicleState& state, const CandidatePath& path,
                             double elapsed, const MpcWeights& weights,
                             const ControlLimits& limits, const VehicleParams& params) {
  if (!(elapsed >= 0.0 && elapsed <= path.duration + 1e-9)) {
    throw Error(ErrorCode::kRange, "lane-change time outside the maneuver");
  }
  return lateral_mpc(state, path_reference(path, elapsed, limits.horizon, limits.period),
                     weights, limits, params);
}

PiSpeedHold::PiSpeedHold(PiGains gains, double ax_min, double ax_max)
    : gains_(gains), ax_min_(ax_min), ax_max_(ax_max) {}

double PiSpeedHold::update(double vx, double target, double dt) {
  const double error = target - vx;
  const double raw = gains_.kp * error + gains_.ki * integral_;
  const double command = std::clamp(raw, ax_min_, ax_max_);
  // Conditional integration: freeze the integrator while saturated outward.
  const bool saturated = (raw > ax_max_ && error > 0.0) || (raw < ax_min_ && error < 0.0);
  if (!saturated) integral_ += error * dt;
  if (gains_.ki > 0.0) {
    integral_ = std::clamp(integral_, ax_min_ / gains_.ki, ax_max_ / gains_.ki);
  }
  return command;
}

}  // namespace cruise
