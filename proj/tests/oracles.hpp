#pragma once

#include <cstdint>
#include <limits>
#include <random>

#include "cruise/agent.hpp"
#include "cruise/motion_control.hpp"
#include "cruise/path_planner.hpp"
#include "cruise/qp.hpp"

namespace cruise::oracle {

/// Over-relaxed operator splitting on min 1/2 x'Hx + f'x, Ax <= b, Ex = e.
struct SplittingResult {
  Eigen::VectorXd x;
  bool converged = false;
  int iterations = 0;
};
SplittingResult splitting_qp(const QpProblem& p);

/// Random convex problem: 10 variables, rank-deficient PSD Hessian in most
/// draws, 8 general rows plus |x_i| <= 3 boxes, optional 2 equality rows.
QpProblem random_psd_problem(std::mt19937_64& rng, bool with_equality);

double max_violation(const QpProblem& p, const Eigen::VectorXd& x);

/// Lane change of 3.75 m on the plant under the lane-changing MPC with the
/// PI speed hold; ratios are plant-level peaks over the stability bounds.
struct ClosedLoop {
  double max_tracking = 0.0;
  double max_yaw_ratio = 0.0;
  double max_front_ratio = 0.0;
  double max_rear_ratio = 0.0;
  double max_speed_error = 0.0;
};
ClosedLoop lane_change_closed_loop(double speed, double duration, const MpcWeights& w,
                                   const ControlLimits& limits = {},
                                   const VehicleParams& params = {});

/// Gaps recomputed from raw vehicle positions in `lane`, bumper to bumper.
struct RawGaps {
  double leader = std::numeric_limits<double>::infinity();
  double leader_speed = 0.0;
  double follower = std::numeric_limits<double>::infinity();
  double follower_speed = 0.0;
};
RawGaps raw_gaps(const TrafficEnv& env, int lane);

/// Resets the default scenario on `seeds` seeds and re-checks every generated
/// candidate against the sideslip limit, both gap inequalities and the
/// duration floor and cap.
struct CandidateAudit {
  int checked = 0;
  int violations = 0;
};
CandidateAudit audit_candidates(const ScenarioConfig& scenario, const PlannerConfig& planner,
                                int seeds);

/// Max relative error of the analytic network gradient against central
/// differences of sum_k mask_k <C_k, Q_k>, with the core scaled by 1/K.
double network_gradient_error(const MlpTopology& topology, const std::vector<char>& mask,
                              std::uint64_t seed);

/// Q* of the two-state MDP below by value iteration (rows are states).
Eigen::Matrix2d toy_q_star(double gamma);

/// Max |Q - Q*| over states, actions and heads after `steps` gradient steps on
/// a two-state, two-action deterministic MDP, Q* from value iteration.
double toy_mdp_error(int heads, double mask_probability, int steps, std::uint64_t seed);

}  // namespace cruise::oracle
