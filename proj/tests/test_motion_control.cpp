#include "cruise/motion_control.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "cruise/error.hpp"
#include "oracles.hpp"
#include "cruise/path_planner.hpp"
#include "cruise/qp.hpp"

namespace cruise {
namespace {

const VehicleParams kParams{};
const ControlLimits kLimits{};

TEST(SolveQp, UnconstrainedIdentity) {
  const QpProblem p =
      QpProblem::unconstrained(Eigen::MatrixXd::Identity(4, 4), -Eigen::VectorXd::Ones(4));
  const QpSolution s = solve_qp(p);
  ASSERT_TRUE(s.ok());
  EXPECT_LE((s.x - Eigen::VectorXd::Ones(4)).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_NEAR(s.objective, -2.0, 1e-12);
}

TEST(SolveQp, BoxClipsOptimum) {
  QpProblem p =
      QpProblem::unconstrained(Eigen::MatrixXd::Identity(4, 4), -Eigen::VectorXd::Ones(4));
  p.a_ineq = Eigen::MatrixXd::Identity(4, 4);
  p.b_ineq = Eigen::VectorXd::Constant(4, 0.5);
  const QpSolution s = solve_qp(p);
  ASSERT_TRUE(s.ok());
  EXPECT_LE((s.x - Eigen::VectorXd::Constant(4, 0.5)).lpNorm<Eigen::Infinity>(), 1e-12);
  EXPECT_EQ(s.active.size(), 4u);
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(s.lambda_ineq(i), 0.5, 1e-12);
}

TEST(SolveQp, EqualityConstrained) {
  QpProblem p =
      QpProblem::unconstrained(Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2));
  p.a_eq = Eigen::RowVector2d(1.0, 1.0);
  p.b_eq = Eigen::VectorXd::Constant(1, 2.0);
  const QpSolution s = solve_qp(p);
  ASSERT_TRUE(s.ok());
  EXPECT_NEAR(s.x(0), 1.0, 1e-12);
  EXPECT_NEAR(s.x(1), 1.0, 1e-12);
}

TEST(SolveQp, DetectsInfeasibility) {
  QpProblem p =
      QpProblem::unconstrained(Eigen::MatrixXd::Identity(1, 1), Eigen::VectorXd::Zero(1));
  p.a_ineq = Eigen::MatrixXd(2, 1);
  p.a_ineq << 1.0, -1.0;
  p.b_ineq = Eigen::Vector2d(-1.0, -1.0);  // x <= -1 and x >= 1
  EXPECT_EQ(solve_qp(p).status, QpStatus::kInfeasible);
}

TEST(SolveQp, RejectsAsymmetricHessian) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Identity(2, 2);
  h(0, 1) = 1.0;
  const QpProblem p = QpProblem::unconstrained(h, Eigen::VectorXd::Zero(2));
  EXPECT_THROW(solve_qp(p), Error);
}

TEST(SolveQp, RandomPsdMatchesReference) {
  std::mt19937_64 rng(20240611);
  int singular = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const QpProblem p = oracle::random_psd_problem(rng, trial % 3 == 0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p.hessian);
    if (eig.eigenvalues().minCoeff() < 1e-8) ++singular;
    const QpSolution s = solve_qp(p);
    ASSERT_TRUE(s.ok()) << "trial " << trial << " status " << to_string(s.status);
    const KktResiduals k = kkt_residuals(p, s);
    ASSERT_LE(k.max(), 1e-6) << "trial " << trial << " stationarity " << k.stationarity
                             << " complementarity " << k.complementarity;
    ASSERT_LE(oracle::max_violation(p, s.x), 1e-8) << "trial " << trial;

    const oracle::SplittingResult ref = oracle::splitting_qp(p);
    ASSERT_TRUE(ref.converged) << "trial " << trial;
    const double f_ref = p.objective(ref.x);
    const double f_qp = p.objective(s.x);
    EXPECT_LE(std::abs(f_qp - f_ref), 1e-5 * std::max(1.0, std::abs(f_ref)))
        << "trial " << trial;
  }
  // The sample must exercise the semidefinite path.
  EXPECT_GT(singular, 500);
}

TEST(Weights, PresetsFollowRatios) {
  const WeightPresets presets;
  for (int level = 1; level <= 3; ++level) {
    const MpcWeights w = presets.combined(level);
    EXPECT_DOUBLE_EQ(w.r1, 4.0 * w.p1);
    EXPECT_DOUBLE_EQ(w.p22, 10.0 * w.p21);
  }
  EXPECT_DOUBLE_EQ(presets.keeping(1).p1, 0.5);
  EXPECT_DOUBLE_EQ(presets.keeping(1).r1, 2.0);
  EXPECT_DOUBLE_EQ(presets.changing(3).r2, 5.0);
  EXPECT_THROW(presets.keeping(0), Error);
  EXPECT_THROW(presets.changing(4), Error);
}

TEST(LaneKeeping, AtMaxSpeedHoldsZero) {
  const MpcOutcome o = lane_keeping_mpc(kLimits.vx_max, 0.0, std::nullopt, MpcWeights{}, kLimits);
  EXPECT_TRUE(o.status == QpStatus::kOptimal);
  EXPECT_LE(std::abs(o.command), 1e-6);
  EXPECT_FALSE(o.fallback);
}

TEST(LaneKeeping, PureTrackingLimit) {
  MpcWeights w;
  for (double p1 : {1e-2, 1e-4, 1e-6}) {
    w.p1 = p1;
    const MpcOutcome o = lane_keeping_mpc(25.0, 2.0, std::nullopt, w, kLimits);
    ASSERT_TRUE(o.status == QpStatus::kOptimal);
    EXPECT_NEAR(o.command, 2.0, 50.0 * p1);
  }
}

TEST(LaneKeeping, LeaderStoppedAtSafeGapBrakesWithFallback) {
  const MpcOutcome o =
      lane_keeping_mpc(20.0, 0.0, LeaderPrediction{kLimits.safe_gap, 0.0}, MpcWeights{}, kLimits);
  EXPECT_LT(o.command, 0.0);
  EXPECT_TRUE(o.fallback);
  EXPECT_DOUBLE_EQ(o.command, kLimits.ax_min);
}

// Direct rollout of the double integrator with Euler position update.
struct Rollout {
  double cost = 0.0;
  bool feasible = true;
};

Rollout rollout(const std::vector<double>& a, double v0, double a_ref, double gap0,
                double lead_speed, const MpcWeights& w, const ControlLimits& lim) {
  Rollout r;
  double v = v0;
  double gap = gap0;
  for (double ak : a) {
    if (ak < lim.ax_min - 1e-12 || ak > lim.ax_max + 1e-12) r.feasible = false;
    gap += lim.period * (lead_speed - v);
    v += lim.period * ak;
    r.cost += w.p1 * (v - lim.vx_max) * (v - lim.vx_max) + w.r1 * (ak - a_ref) * (ak - a_ref);
    if (gap < lim.safe_gap - 1e-9) r.feasible = false;
    if (v > lim.vx_max + 1e-9 || v < lim.vx_min - 1e-9) r.feasible = false;
  }
  return r;
}

// Double-integrator closed loop behind a constant-speed leader; returns the
// smallest gap seen over `seconds`.
double chase_min_gap(double v0, double gap0, double lead_speed, double a_ref,
                     const ControlLimits& lim, double seconds) {
  double v = v0, gap = gap0, min_gap = gap0;
  const int steps = static_cast<int>(std::lround(seconds / lim.period));
  for (int k = 0; k < steps; ++k) {
    const MpcOutcome o =
        lane_keeping_mpc(v, a_ref, LeaderPrediction{gap, lead_speed}, MpcWeights{}, lim);
    gap += lim.period * (lead_speed - v) - 0.5 * lim.period * lim.period * o.command;
    v = std::max(0.0, v + lim.period * o.command);
    min_gap = std::min(min_gap, gap);
  }
  return min_gap;
}

TEST(LaneKeeping, TerminalBrakingAvoidsSlowLeader) {
  // 20 m/s closing speed needs 50 m at 4 m/s^2; the one-second horizon alone
  // notices too late.
  ControlLimits bare = kLimits;
  bare.terminal_braking = false;
  EXPECT_LT(chase_min_gap(33.0, 80.0, 13.0, 2.0, bare, 15.0), 0.0);
  EXPECT_GE(chase_min_gap(33.0, 80.0, 13.0, 2.0, kLimits, 15.0), kLimits.safe_gap - 1.0);
}

TEST(LaneKeeping, TerminalBrakingPlanCoversStoppingDistance) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> speed(17.0, 33.0), lead(10.0, 33.0), gap(20.0, 150.0);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const double v0 = speed(rng), vl = lead(rng), g0 = gap(rng);
    const QpProblem p = lane_keeping_problem(v0, 2.0, LeaderPrediction{g0, vl}, MpcWeights{}, kLimits);
    const QpSolution s = solve_qp(p);
    if (!s.ok()) continue;
    double v = v0, g = g0;
    for (int k = 0; k < kLimits.horizon; ++k) {
      g += kLimits.period * (vl - v);
      v += kLimits.period * s.x(k);
    }
    const double d = std::max(0.0, v - vl);
    EXPECT_GE(g - kLimits.safe_gap + 1e-7, d * d / (2.0 * std::abs(kLimits.ax_min)));
    ++checked;
  }
  EXPECT_GT(checked, 200);
}

TEST(LaneKeeping, StoppedLeaderMatchesExhaustiveGrid) {
  ControlLimits lim = kLimits;
  lim.horizon = 5;
  lim.terminal_braking = false;  // the grid enumerates per-step gap rows only
  const MpcWeights w;
  const double v0 = 20.0;
  const double gap0 = 19.95;  // coasting would end at 14.95 m
  const LeaderPrediction leader{gap0, 0.0};
  const MpcOutcome o = lane_keeping_mpc(v0, 0.0, leader, w, lim);
  ASSERT_TRUE(o.status == QpStatus::kOptimal);
  EXPECT_FALSE(o.fallback);
  EXPECT_LT(o.command, 0.0);

  const QpProblem p = lane_keeping_problem(v0, 0.0, leader, w, lim);
  const QpSolution s = solve_qp(p);
  std::vector<double> plan(s.x.data(), s.x.data() + s.x.size());
  const Rollout mpc = rollout(plan, v0, 0.0, gap0, 0.0, w, lim);
  ASSERT_TRUE(mpc.feasible);

  double best = std::numeric_limits<double>::infinity();
  double best_first = 0.0;
  int feasible = 0;
  std::vector<double> a(5);
  const int levels = 17;  // step 0.5 over [-4, 4]
  for (int code = 0; code < levels * levels * levels * levels * levels; ++code) {
    int c = code;
    for (int k = 0; k < 5; ++k) {
      a[k] = -4.0 + 0.5 * (c % levels);
      c /= levels;
    }
    const Rollout r = rollout(a, v0, 0.0, gap0, 0.0, w, lim);
    if (!r.feasible) continue;
    ++feasible;
    if (r.cost < best) {
      best = r.cost;
      best_first = a[0];
    }
  }
  ASSERT_GT(feasible, 0);
  EXPECT_LT(best_first, 0.0);
  EXPECT_LE(mpc.cost, best + 1e-9);
  // The QP objective is the rollout cost up to a constant.
  const double constant = mpc.cost - s.objective;
  EXPECT_NEAR(rollout(std::vector<double>(5, -4.0), v0, 0.0, gap0, 0.0, w, lim).cost - constant,
              p.objective(Eigen::VectorXd::Constant(5, -4.0)), 1e-9);
}

TEST(LaneKeeping, MonotoneInLeaderGap) {
  double previous = -std::numeric_limits<double>::infinity();
  for (double gap = 16.0; gap <= 80.0; gap += 0.5) {
    const MpcOutcome o =
        lane_keeping_mpc(25.0, 2.0, LeaderPrediction{gap, 20.0}, MpcWeights{}, kLimits);
    EXPECT_GE(o.command, previous - 1e-7) << "gap " << gap;
    previous = o.command;
  }
}

TEST(LaneKeeping, WeightScalingInvariance) {
  const WeightPresets presets;
  for (int level = 1; level <= 3; ++level) {
    const MpcWeights w = presets.keeping(level);
    for (double a_ref : {-2.0, 0.0, 2.0}) {
      const std::optional<LeaderPrediction> leader = LeaderPrediction{30.0, 22.0};
      const MpcOutcome base = lane_keeping_mpc(25.0, a_ref, leader, w, kLimits);
      const MpcOutcome scaled = lane_keeping_mpc(25.0, a_ref, leader, w.scaled(7.5), kLimits);
      EXPECT_NEAR(base.command, scaled.command, 1e-7);
    }
  }
}

TEST(LaneKeeping, NeverExceedsAccelerationBounds) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> speed(kLimits.vx_min, kLimits.vx_max);
  std::uniform_real_distribution<double> gap(15.5, 80.0);
  for (int i = 0; i < 200; ++i) {
    const MpcOutcome o = lane_keeping_mpc(speed(rng), 2.0, LeaderPrediction{gap(rng), speed(rng)},
                                          MpcWeights{}, kLimits);
    EXPECT_GE(o.command, kLimits.ax_min - 1e-9);
    EXPECT_LE(o.command, kLimits.ax_max + 1e-9);
  }
}

TEST(StabilityBounds, Examples) {
  const StabilityBounds b = stability_bounds(25.0, kParams);
  EXPECT_NEAR(b.yaw_rate, 0.33354, 5e-6);
  // Direct evaluation of the arctangent bounds; the rounded hand values
  // quoted alongside them agree to 1e-5.
  EXPECT_NEAR(b.front_slip, std::atan(0.85 * 1274.0 * 9.81 * 1.562 / (2.0 * 85000.0 * 2.578)),
              1e-15);
  EXPECT_NEAR(b.rear_slip, std::atan(0.85 * 1274.0 * 9.81 * 1.016 / (2.0 * 112000.0 * 2.578)),
              1e-15);
  EXPECT_NEAR(b.front_slip, 0.037848, 1e-5);
  EXPECT_NEAR(b.rear_slip, 0.018693, 1e-5);
  EXPECT_THROW(stability_bounds(0.05, kParams), Error);
}

VehicleState cruising(double vx, double y) {
  VehicleState s;
  s.vx = vx;
  s.y = y;
  return s;
}

TEST(LaneChanging, OnPathWithHeavyInputPenaltyStaysQuiet) {
  const CandidatePath path = make_candidate(0.0, 0.0, 3.75, 25.0, 2.5, PlannerConfig{});
  const double t = 1.25;  // inflection point of the quintic
  const ReferenceState r = reference_states(path, t);
  VehicleState s = cruising(25.0, r.y);
  s.yaw = r.heading;
  s.x = 25.0 * t;
  MpcWeights w;
  w.r2 = 1e7;
  const MpcOutcome o = lane_changing_mpc(s, path, t, w, kLimits, kParams);
  ASSERT_TRUE(o.status == QpStatus::kOptimal);
  EXPECT_LE(std::abs(o.command), 1e-3);
}

TEST(LaneChanging, CorrectiveSign) {
  const VehicleState s = cruising(25.0, 0.0);
  const MpcOutcome left = lateral_mpc(s, lane_reference(0.5, kLimits.horizon), MpcWeights{},
                                      kLimits, kParams);
  EXPECT_GT(left.command, 0.0);
  const MpcOutcome right = lateral_mpc(s, lane_reference(-0.5, kLimits.horizon), MpcWeights{},
                                       kLimits, kParams);
  EXPECT_LT(right.command, 0.0);
  EXPECT_NEAR(left.command, -right.command, 1e-9);
}

TEST(LaneChanging, ZeroErrorGivesZeroSteer) {
  const MpcOutcome o = lateral_mpc(cruising(25.0, 3.75), lane_reference(3.75, kLimits.horizon),
                                   MpcWeights{}, kLimits, kParams);
  EXPECT_LE(std::abs(o.command), 1e-10);
}

TEST(LaneChanging, ElapsedOutsideManeuverThrows) {
  const CandidatePath path = make_candidate(0.0, 0.0, 3.75, 25.0, 2.5, PlannerConfig{});
  EXPECT_THROW(lane_changing_mpc(cruising(25.0, 0.0), path, 3.0, MpcWeights{}, kLimits, kParams),
               Error);
  EXPECT_THROW(lateral_problem(cruising(25.0, 0.0), lane_reference(0.0, 5), MpcWeights{}, kLimits,
                               kParams, kLimits.horizon),
               Error);
}

TEST(LaneChanging, UnrecoverableYawRateFallsBack) {
  VehicleState s = cruising(25.0, 0.0);
  s.yaw_rate = 2.0;  // six times the stability bound
  const MpcOutcome o =
      lateral_mpc(s, lane_reference(0.0, kLimits.horizon), MpcWeights{}, kLimits, kParams);
  EXPECT_TRUE(o.fallback);
  EXPECT_EQ(o.command, 0.0);
  EXPECT_TRUE(o.status == QpStatus::kInfeasible);
}

oracle::ClosedLoop run_lane_change(double speed, double duration, const MpcWeights& w) {
  return oracle::lane_change_closed_loop(speed, duration, w, kLimits, kParams);
}

TEST(LaneChanging, ClosedLoopTracksReferenceWithinBounds) {
  const oracle::ClosedLoop c = run_lane_change(25.0, 2.5, MpcWeights{});
  EXPECT_LE(c.max_tracking, 0.15);
  EXPECT_LE(c.max_yaw_ratio, 1.02);
  EXPECT_LE(c.max_front_ratio, 1.02);
  EXPECT_LE(c.max_rear_ratio, 1.02);
}

TEST(LaneChanging, ClosedLoopStableForAllPresets) {
  const WeightPresets presets;
  for (int level = 1; level <= 3; ++level) {
    for (double speed : {18.0, 25.0, 32.0}) {
      const oracle::ClosedLoop c = run_lane_change(speed, 3.0, presets.combined(level));
      EXPECT_LE(c.max_yaw_ratio, 1.02) << level << " " << speed;
      EXPECT_LE(c.max_front_ratio, 1.02) << level << " " << speed;
      EXPECT_LE(c.max_rear_ratio, 1.02) << level << " " << speed;
    }
  }
}

TEST(PiSpeedHold, ZeroErrorZeroOutput) {
  PiSpeedHold pi(PiGains{}, -4.0, 4.0);
  EXPECT_EQ(pi.update(25.0, 25.0, 0.05), 0.0);
  EXPECT_EQ(pi.integral(), 0.0);
}

TEST(PiSpeedHold, StepErrorProportionalKick) {
  PiSpeedHold pi(PiGains{1.2, 0.5}, -4.0, 4.0);
  EXPECT_DOUBLE_EQ(pi.update(24.0, 25.0, 0.05), 1.2);
  EXPECT_NEAR(pi.integral(), 0.05, 1e-15);
  EXPECT_NEAR(pi.update(24.0, 25.0, 0.05), 1.2 + 0.5 * 0.05, 1e-15);
}

TEST(PiSpeedHold, ClampsAndLimitsWindup) {
  PiSpeedHold pi(PiGains{1.2, 0.5}, -4.0, 4.0);
  for (int i = 0; i < 1000; ++i) EXPECT_LE(pi.update(10.0, 30.0, 0.05), 4.0);
  EXPECT_LE(pi.integral(), 4.0 / 0.5 + 1e-12);
  // Once the error flips sign the output leaves saturation promptly.
  double out = 4.0;
  int steps = 0;
  while (out > 0.0 && steps < 100) {
    out = pi.update(31.0, 30.0, 0.05);
    ++steps;
  }
  EXPECT_LT(steps, 100);
  pi.reset();
  EXPECT_EQ(pi.integral(), 0.0);
}

TEST(PiSpeedHold, ClosedLoopSpeedErrorDuringLaneChange) {
  const oracle::ClosedLoop c = run_lane_change(25.0, 3.0, MpcWeights{});
  EXPECT_LE(c.max_speed_error, 0.2);
}

}  // namespace
}  // namespace cruise
