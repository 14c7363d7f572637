#pragma once

#include <Eigen/Dense>

namespace cruise {

/// Single-track vehicle configuration. Cornering stiffnesses are magnitudes;
/// the tire force opposes the slip angle (F = -2 K alpha).
struct VehicleParams {
  double mass = 1274.0;         // kg
  double yaw_inertia = 606.1;   // kg m^2
  double lf = 1.016;            // CG to front axle, m
  double lr = 1.562;            // CG to rear axle, m
  double kf = 85000.0;          // front cornering stiffness, N/rad
  double kr = 112000.0;         // rear cornering stiffness, N/rad
  double mu = 0.85;             // road adhesion
  double g = 9.81;              // m/s^2
  double length = 4.5;          // m
  double width = 1.8;           // m

  double wheelbase() const { return lf + lr; }
  /// Throws Error(kConfig) when any field is out of range.
  void validate() const;
};

/// zeta = [Vx, Vy, yaw, yaw_rate, X, Y]; Y grows to the left.
struct VehicleState {
  double vx = 0.0;
  double vy = 0.0;
  double yaw = 0.0;
  double yaw_rate = 0.0;
  double x = 0.0;
  double y = 0.0;
};

struct ControlInput {
  double ax = 0.0;     // m/s^2
  double steer = 0.0;  // front-wheel angle, rad, positive steers left
};

struct SlipAngles {
  double front = 0.0;
  double rear = 0.0;
};

/// Continuous or discrete linear model x' = A x + B u.
struct LinearModel {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;

  Eigen::Index state_dim() const { return a.rows(); }
  Eigen::Index input_dim() const { return b.cols(); }
};

using StateVector = Eigen::Matrix<double, 6, 1>;
using InputVector = Eigen::Vector2d;

inline constexpr double kMinSpeed = 0.1;  // m/s, floor for slip-angle division

StateVector to_vector(const VehicleState& s);
VehicleState from_vector(const StateVector& v);

SlipAngles tire_slip_angles(const VehicleState& state, double steer,
                            const VehicleParams& params);
double sideslip(const VehicleState& state);

/// State-dependent A(zeta), B such that f(zeta, v) = A(zeta) zeta + B v holds
/// exactly; around a straight state A is also the Jacobian.
LinearModel continuous_matrices(const VehicleState& state,
                                const VehicleParams& params);

/// Nonlinear right-hand side of the single-track model.
StateVector state_derivative(const StateVector& state, const InputVector& input,
                             const VehicleParams& params);

/// One fixed-step RK4 step of length dt in (0, 0.05].
VehicleState step_dynamics(const VehicleState& state, const ControlInput& input,
                           double dt, const VehicleParams& params);

/// Forward Euler: Ad = I + A dt, Bd = B dt.
LinearModel discretize(const LinearModel& model, double dt);

/// Zero-order-hold discretization through the augmented matrix exponential.
LinearModel discretize_exact(const LinearModel& model, double dt);

}  // namespace cruise
