#pragma once

#include <optional>
#include <vector>

#include "cruise/path_planner.hpp"
#include "cruise/qp.hpp"

namespace cruise {

struct MpcWeights {
  double p1 = 1.0;   // speed tracking (lane keeping)
  double r1 = 4.0;   // acceleration tracking
  double p21 = 1.0;  // heading tracking (lane changing)
  double p22 = 10.0; // lateral position tracking
  double r2 = 10.0;  // steering effort

  void validate() const;
  MpcWeights scaled(double c) const { return {c * p1, c * r1, c * p21, c * p22, c * r2}; }
};

/// Three preset levels per maneuver family, indexed 1..3.
struct WeightPresets {
  std::array<double, 3> p1{0.5, 1.0, 2.0};
  std::array<double, 3> p21{0.5, 1.0, 2.0};
  std::array<double, 3> r2{20.0, 10.0, 5.0};
  double r1_ratio = 4.0;
  double p22_ratio = 10.0;

  MpcWeights keeping(int level) const;
  MpcWeights changing(int level) const;
  /// Keeping and changing presets of the same level in one struct.
  MpcWeights combined(int level) const;
};

struct ControlLimits {
  double ax_min = -4.0;
  double ax_max = 4.0;
  double steer_min = -0.1;
  double steer_max = 0.1;
  double vx_min = 16.67;
  double vx_max = 33.33;
  double safe_gap = 15.0;
  int horizon = 20;
  double period = 0.05;
  /// Lane keeping also requires the gap at the end of the horizon to cover
  /// braking to the leader's speed at |ax_min|, so the short horizon cannot
  /// run into a slow leader it can no longer avoid.
  bool terminal_braking = true;

  void validate() const;
};

struct MpcOutcome {
  double command = 0.0;
  QpStatus status = QpStatus::kOptimal;
  bool fallback = false;
  int iterations = 0;
  int active_constraints = 0;
  int horizon = 0;
  double cost = 0.0;
};

/// Leader seen by the lane-keeping controller, predicted at constant speed.
struct LeaderPrediction {
  double gap = 0.0;
  double speed = 0.0;
};

/// Condensed QP over the acceleration sequence on the double integrator.
QpProblem lane_keeping_problem(double vx, double a_ref, const std::optional<LeaderPrediction>& leader,
                               const MpcWeights& weights, const ControlLimits& limits);

MpcOutcome lane_keeping_mpc(double vx, double a_ref,
                            const std::optional<LeaderPrediction>& leader,
                            const MpcWeights& weights, const ControlLimits& limits);

struct StabilityBounds {
  double yaw_rate = 0.0;
  double front_slip = 0.0;
  double rear_slip = 0.0;
};

StabilityBounds stability_bounds(double vx, const VehicleParams& params);

/// Lateral reference over the horizon: heading and global Y at steps 1..Np.
struct LateralReference {
  std::vector<double> heading;
  std::vector<double> y;
};

/// Tracks the candidate path from `elapsed`; beyond tc holds the target lane
/// with zero heading.
LateralReference path_reference(const CandidatePath& path, double elapsed, int horizon,
                                double period);

/// Straight reference at lateral position `y`.
LateralReference lane_reference(double y, int horizon);

/// Condensed steering QP on the lateral subsystem [Vy, yaw_rate, yaw, Y].
QpProblem lateral_problem(const VehicleState& state, const LateralReference& ref,
                          const MpcWeights& weights, const ControlLimits& limits,
                          const VehicleParams& params, int horizon);

/// Steering MPC with hard stability constraints; on infeasibility retries
/// with half the horizon, then falls back to zero steering.
MpcOutcome lateral_mpc(const VehicleState& state, const LateralReference& ref,
                       const MpcWeights& weights, const ControlLimits& limits,
                       const VehicleParams& params);

MpcOutcome lane_changing_mpc(const VehicleState& state, const CandidatePath& path,
                             double elapsed, const MpcWeights& weights,
                             const ControlLimits& limits, const VehicleParams& params);

struct PiGains {
  double kp = 1.2;
  double ki = 0.5;
};

/// Speed hold used while the lateral controller executes a lane change.
class PiSpeedHold {
 public:
  PiSpeedHold(PiGains gains, double ax_min, double ax_max);

  double update(double vx, double target, double dt);
  void reset() { integral_ = 0.0; }
  double integral() const { return integral_; }

 private:
  PiGains gains_;
  double ax_min_;
  double ax_max_;
  double integral_ = 0.0;
};

}  // namespace cruise
