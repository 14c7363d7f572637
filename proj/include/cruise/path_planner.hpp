#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cruise/traffic.hpp"

namespace cruise {

/// IRL objective features [H_sta, H_col, H_com, H_tra].
using FeatureVector = Eigen::Vector4d;
/// Linear reward weights over FeatureVector.
using WeightVector = Eigen::Vector4d;

enum FeatureIndex { kStability = 0, kCollisionRisk = 1, kComfort = 2, kTravel = 3 };

/// Y(X) = sum c_i X^i with Y(0) = Y'(0) = Y''(0) = 0, Y(P) = F, Y'(P) = Y''(P) = 0.
struct QuinticProfile {
  std::array<double, 6> coeffs{};

  double value(double x) const;
  double first_derivative(double x) const;
  double second_derivative(double x) const;
};

QuinticProfile quintic_profile(double lateral, double longitudinal);

struct PathSample {
  double t = 0.0;
  double x = 0.0;         // global X
  double y = 0.0;         // lateral offset from the maneuver start lane
  double y_rate = 0.0;
  double sideslip = 0.0;  // Y_rate / Vx
  double heading = 0.0;   // atan(Y_rate / Vx)
};

struct ReferenceState {
  double y = 0.0;
  double y_rate = 0.0;
  double sideslip = 0.0;
  double heading = 0.0;
};

/// Quintic lane-change candidate at frozen longitudinal speed.
struct CandidatePath {
  double lateral = 0.0;       // F, signed, + is left
  double longitudinal = 0.0;  // P = Vx tc
  double duration = 0.0;      // tc
  double speed = 0.0;         // Vx
  double x0 = 0.0;            // global start
  double y0 = 0.0;            // start lane center
  QuinticProfile profile;
  std::vector<PathSample> samples;  // l = 1..eta, equal spacing of about 0.1 s

  int sample_count() const { return static_cast<int>(samples.size()); }
};

enum class BoundTag { kSideslip, kGap, kFollower, kClipMin, kClipMax };

struct FeasibilityBounds {
  double tc_min = 0.0;
  double tc_max = 0.0;
  BoundTag min_tag = BoundTag::kSideslip;
  BoundTag max_tag = BoundTag::kClipMax;

  bool feasible() const { return tc_min <= tc_max; }
};

struct PlannerConfig {
  double sample_interval = 0.1;   // s
  double tc_floor = 0.5;          // s
  double tc_cap = 6.0;            // s
  double max_decel = 4.0;         // ax,max in the gap condition, m/s^2
  double sideslip_factor = 0.02;  // bound atan(factor * mu * g)
  /// Also reserve the distance needed to cancel the closing speed at
  /// max_decel once the maneuver ends (target leader and target follower).
  bool braking_margin = true;
};

enum class Direction { kLeft, kRight };

/// Sideslip bound atan(factor * mu * g).
double sideslip_limit(const VehicleParams& vehicle, const PlannerConfig& cfg);

/// Smallest tc satisfying the peak sideslip 1.875 |F| / (tc Vx) <= limit.
double min_duration_for_sideslip(double lateral, double speed, double limit);

/// Largest tc with Vrel tc + a tc^2 / 2 <= space; +inf when unconstrained.
double max_duration_for_gap(double closing_speed, double space, double max_decel);

FeasibilityBounds lane_change_time_bounds(const TrafficEnv& env, Direction direction,
                                          const PlannerConfig& cfg);

/// Reference states at time t in [0, tc] (lateral offset relative to start).
ReferenceState reference_states(const CandidatePath& path, double t);

CandidatePath make_candidate(double x0, double y0, double lateral, double speed,
                             double duration, const PlannerConfig& cfg);

std::vector<CandidatePath> generate_candidates(const TrafficEnv& env, Direction direction,
                                               const FeasibilityBounds& bounds,
                                               const PlannerConfig& cfg);

/// Features with HDVs extrapolated at constant velocity over the maneuver.
FeatureVector path_features(const CandidatePath& path, const TrafficEnv& env);

/// Index of argmax w^T H; ties go to the smallest duration.
std::size_t select_path_index(std::span<const FeatureVector> features,
                              std::span<const CandidatePath> candidates,
                              const WeightVector& weights);
const CandidatePath& select_path(std::span<const CandidatePath> candidates,
                                 std::span<const FeatureVector> features,
                                 const WeightVector& weights);

/// Lane-change direction with the larger available space, or nullopt when no
/// adjacent lane exists.
std::optional<Direction> preferred_direction(const TrafficEnv& env, const PlannerConfig& cfg);

/// Tagged rows: `H,id,F,P,tc,H_sta,H_col,H_com,H_tra` then `S,id,l,t,X,Y,Ydot,beta`.
void write_candidates_csv(std::ostream& out, std::span<const CandidatePath> candidates,
                          std::span<const FeatureVector> features);

}  // namespace cruise
