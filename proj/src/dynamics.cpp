#include "cruise/dynamics.hpp"

#include <cmath>
#include <string>

#include <unsupported/Eigen/MatrixFunctions>

#include "cruise/error.hpp"

namespace cruise {

namespace {

void require_speed(double vx) {
  if (!(vx > kMinSpeed)) {
    throw Error(ErrorCode::kDegenerateSpeed,
                "longitudinal speed " + std::to_string(vx) +
                    " m/s is below the slip-angle floor");
  }
}

}  // namespace

void VehicleParams::validate() const {
  const bool positive = mass > 0 && yaw_inertia > 0 && lf > 0 && lr > 0 &&
                        kf > 0 && kr > 0 && g > 0 && length > 0 && width > 0;
  if (!positive) {
    throw Error(ErrorCode::kConfig, "vehicle parameters must be positive");
  }
  if (!(mu > 0.0 && mu <= 1.2)) {
    throw Error(ErrorCode::kConfig, "road adhesion must lie in (0, 1.2]");
  }
}

StateVector to_vector(const VehicleState& s) {
  StateVector v;
  v << s.vx, s.vy, s.yaw, s.yaw_rate, s.x, s.y;
  return v;
}

VehicleState from_vector(const StateVector& v) {
  return {v(0), v(1), v(2), v(3), v(4), v(5)};
}

SlipAngles tire_slip_angles(const VehicleState& state, double steer,
                            const VehicleParams& params) {
  require_speed(state.vx);
  return {(params.lf * state.yaw_rate + state.vy) / state.vx - steer,
          (-params.lr * state.yaw_rate + state.vy) / state.vx};
}

double sideslip(const VehicleState& state) {
  require_speed(state.vx);
  return state.vy / state.vx;
}

LinearModel continuous_matrices(const VehicleState& state,
                                const VehicleParams& p) {
  require_speed(state.vx);
  // Signed stiffness: the lateral force acts against the slip angle.
  const double cf = -p.kf;
  const double cr = -p.kr;
  const double vx = state.vx;
  const double m = p.mass;
  const double jz = p.yaw_inertia;

  LinearModel model;
  model.a = Eigen::MatrixXd::Zero(6, 6);
  model.b = Eigen::MatrixXd::Zero(6, 2);
  auto& a = model.a;
  a(0, 3) = state.vy;
  a(1, 1) = 2.0 * (cr + cf) / (m * vx);
  a(1, 3) = 2.0 * (cf * p.lf - cr * p.lr) / (m * vx) - vx;
  a(2, 3) = 1.0;
  a(3, 1) = 2.0 * (cf * p.lf - cr * p.lr) / (jz * vx);
  a(3, 3) = 2.0 * (cr * p.lr * p.lr + cf * p.lf * p.lf) / (jz * vx);
  a(4, 0) = 1.0;
  a(4, 2) = -state.vy;
  a(5, 1) = 1.0;
  a(5, 2) = vx;

  model.b(0, 0) = 1.0;
  model.b(1, 1) = -2.0 * cf / m;
  model.b(3, 1) = -2.0 * cf * p.lf / jz;
  return model;
}

StateVector state_derivative(const StateVector& s, const InputVector& u,
                             const VehicleParams& p) {
  const double vx = s(0), vy = s(1), yaw = s(2), r = s(3);
  require_speed(vx);
  const double ax = u(0), steer = u(1);

  const double alpha_f = (p.lf * r + vy) / vx - steer;
  const double alpha_r = (-p.lr * r + vy) / vx;
  const double fyf = -2.0 * p.kf * alpha_f;
  const double fyr = -2.0 * p.kr * alpha_r;

  StateVector d;
  d(0) = vy * r + ax;
  d(1) = (fyf + fyr) / p.mass - vx * r;
  d(2) = r;
  d(3) = (p.lf * fyf - p.lr * fyr) / p.yaw_inertia;
  d(4) = vx - vy * yaw;
  d(5) = vx * yaw + vy;
  return d;
}

VehicleState step_dynamics(const VehicleState& state, const ControlInput& input,
                           double dt, const VehicleParams& params) {
  if (!(dt > 0.0 && dt <= 0.05)) {
    throw Error(ErrorCode::kParameter, "plant step must lie in (0, 0.05] s");
  }
  const StateVector s = to_vector(state);
  const InputVector u(input.ax, input.steer);

  auto stage = [&](const StateVector& x) {
    if (!x.allFinite() || !u.allFinite()) {
      throw Error(ErrorCode::kInstability, "vehicle state became non-finite");
    }
    return state_derivative(x, u, params);
  };
  const StateVector k1 = stage(s);
  const StateVector k2 = stage(s + 0.5 * dt * k1);
  const StateVector k3 = stage(s + 0.5 * dt * k2);
  const StateVector k4 = stage(s + dt * k3);
  const StateVector next = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

  if (!next.allFinite()) {
    throw Error(ErrorCode::kInstability, "vehicle state became non-finite");
  }
  return from_vector(next);
}

LinearModel discretize(const LinearModel& model, double dt) {
  if (!(dt > 0.0)) {
    throw Error(ErrorCode::kParameter, "discretization step must be positive");
  }
  const auto n = model.state_dim();
  return {Eigen::MatrixXd::Identity(n, n) + model.a * dt, model.b * dt};
}

LinearModel discretize_exact(const LinearModel& model, double dt) {
  if (!(dt > 0.0)) {
    throw Error(ErrorCode::kParameter, "discretization step must be positive");
  }
  const auto n = model.state_dim();
  const auto m = model.input_dim();
  Eigen::MatrixXd augmented = Eigen::MatrixXd::Zero(n + m, n + m);
  augmented.topLeftCorner(n, n) = model.a * dt;
  augmented.topRightCorner(n, m) = model.b * dt;
  const Eigen::MatrixXd e = augmented.exp();
  return {e.topLeftCorner(n, n), e.topRightCorner(n, m)};
}

}  // namespace cruise
