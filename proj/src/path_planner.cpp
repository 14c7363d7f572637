#include "cruise/path_planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "cruise/error.hpp"

namespace cruise {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kGridTol = 1e-9;

double leader_gap(const std::optional<LeaderInfo>& info) {
  return info ? info->gap : kInf;
}

}  // namespace

double QuinticProfile::value(double x) const {
  double y = 0.0;
  for (int i = 5; i >= 0; --i) y = y * x + coeffs[i];
  return y;
}

double QuinticProfile::first_derivative(double x) const {
  double y = 0.0;
  for (int i = 5; i >= 1; --i) y = y * x + i * coeffs[i];
  return y;
}

double QuinticProfile::second_derivative(double x) const {
  double y = 0.0;
  for (int i = 5; i >= 2; --i) y = y * x + i * (i - 1) * coeffs[i];
  return y;
}

QuinticProfile quintic_profile(double lateral, double longitudinal) {
  if (!(longitudinal > 0.0)) {
    throw Error(ErrorCode::kParameter, "lane-change longitudinal distance must be positive");
  }
  const double p = longitudinal;
  const double p3 = p * p * p;
  return {{0.0, 0.0, 0.0, 10.0 * lateral / p3, -15.0 * lateral / (p3 * p),
           6.0 * lateral / (p3 * p * p)}};
}

double sideslip_limit(const VehicleParams& vehicle, const PlannerConfig& cfg) {
  return std::abs(std::atan(cfg.sideslip_factor * vehicle.mu * vehicle.g));
}

double min_duration_for_sideslip(double lateral, double speed, double limit) {
  return 1.875 * std::abs(lateral) / (speed * limit);
}

double max_duration_for_gap(double closing_speed, double space, double max_decel) {
  if (space == kInf) return kInf;
  if (space < 0.0) return -kInf;
  if (max_decel <= 0.0) return closing_speed > 0.0 ? space / closing_speed : kInf;
  const double v = closing_speed;
  return (-v + std::sqrt(v * v + 2.0 * max_decel * space)) / max_decel;
}

FeasibilityBounds lane_change_time_bounds(const TrafficEnv& env, Direction direction,
                                          const PlannerConfig& cfg) {
  const auto& sc = env.config();
  const int lane = env.ego_lane();
  const int target = lane + (direction == Direction::kLeft ? 1 : -1);
  if (target < 0 || target >= sc.lanes) {
    throw Error(ErrorCode::kRange, "no adjacent lane in the requested direction");
  }
  const double speed = env.ego().vx;
  const double lateral = sc.lane_width;

  FeasibilityBounds b;
  b.tc_min = min_duration_for_sideslip(lateral, speed, sideslip_limit(sc.vehicle, cfg));
  b.min_tag = BoundTag::kSideslip;
  if (b.tc_min < cfg.tc_floor) {
    b.tc_min = cfg.tc_floor;
    b.min_tag = BoundTag::kClipMin;
  }

  const LaneGaps current = env.lane_gaps(lane);
  const LaneGaps adjacent = env.lane_gaps(target);

  // Target lane: closing on its leader with the braking allowance.
  auto stopping = [&](double c) { return cfg.braking_margin ? c * c / (2.0 * cfg.max_decel) : 0.0; };
  const double closing = adjacent.leader ? std::max(0.0, speed - adjacent.leader->speed) : 0.0;
  double tc_max = max_duration_for_gap(
      closing, leader_gap(adjacent.leader) - sc.safe_gap - stopping(closing), cfg.max_decel);
  b.max_tag = BoundTag::kGap;

  // Current lane: the ego leaves it, so only closing speed consumes space.
  if (current.leader) {
    const double c = std::max(0.0, speed - current.leader->speed);
    const double space = current.leader->gap - sc.safe_gap;
    const double t = max_duration_for_gap(c, space, 0.0);
    if (t < tc_max) tc_max = t;
  }
  // Target-lane follower closing on the ego.
  if (adjacent.follower) {
    const double c = std::max(0.0, adjacent.follower->speed - speed);
    const double t =
        max_duration_for_gap(c, adjacent.follower->gap - sc.safe_gap - stopping(c), 0.0);
    if (t < tc_max) {
      tc_max = t;
      b.max_tag = BoundTag::kFollower;
    }
  }
  if (tc_max > cfg.tc_cap) {
    tc_max = cfg.tc_cap;
    b.max_tag = BoundTag::kClipMax;
  }
  b.tc_max = tc_max;
  return b;
}

ReferenceState reference_states(const CandidatePath& path, double t) {
  const double tc = path.duration;
  if (!(t >= -kGridTol && t <= tc + kGridTol)) {
    throw Error(ErrorCode::kRange, "reference time outside the maneuver");
  }
  t = std::clamp(t, 0.0, tc);
  const double f = path.lateral;
  const double tc2 = tc * tc;
  const double tc3 = tc2 * tc;
  const double t2 = t * t;
  ReferenceState r;
  r.y = path.profile.value(path.speed * t);
  r.y_rate = 30.0 * f / tc3 * t2 - 60.0 * f / (tc3 * tc) * t2 * t +
             30.0 * f / (tc3 * tc2) * t2 * t2;
  r.sideslip = r.y_rate / path.speed;
  r.heading = std::atan(r.sideslip);
  return r;
}

CandidatePath make_candidate(double x0, double y0, double lateral, double speed,
                             double duration, const PlannerConfig& cfg) {
  if (!(speed > kMinSpeed) || !(duration > 0.0)) {
    throw Error(ErrorCode::kParameter, "candidate needs positive speed and duration");
  }
  CandidatePath path;
  path.lateral = lateral;
  path.speed = speed;
  path.duration = duration;
  path.longitudinal = speed * duration;
  path.x0 = x0;
  path.y0 = y0;
  path.profile = quintic_profile(lateral, path.longitudinal);

  const int eta = std::max(1, static_cast<int>(std::lround(duration / cfg.sample_interval)));
  path.samples.reserve(eta);
  for (int l = 1; l <= eta; ++l) {
    const double t = duration * l / eta;
    const ReferenceState r = reference_states(path, t);
    path.samples.push_back({t, x0 + speed * t, r.y, r.y_rate, r.sideslip, r.heading});
  }
  return path;
}

std::vector<CandidatePath> generate_candidates(const TrafficEnv& env, Direction direction,
                                               const FeasibilityBounds& bounds,
                                               const PlannerConfig& cfg) {
  if (!bounds.feasible()) {
    throw Error(ErrorCode::kInfeasibleManeuver, "lane-change duration bounds are empty");
  }
  const auto& sc = env.config();
  const double lateral = direction == Direction::kLeft ? sc.lane_width : -sc.lane_width;
  const double y0 = sc.lane_center(env.ego_lane());

  std::vector<double> durations;
  for (int k = 0;; ++k) {
    const double tc = bounds.tc_min + k * cfg.sample_interval;
    if (tc > bounds.tc_max + kGridTol) break;
    durations.push_back(tc);
  }
  if (durations.empty() || durations.back() < bounds.tc_max - kGridTol) {
    durations.push_back(bounds.tc_max);
  }

  std::vector<CandidatePath> out;
  out.reserve(durations.size());
  for (double tc : durations) {
    out.push_back(make_candidate(env.ego().x, y0, lateral, env.ego().vx, tc, cfg));
  }
  return out;
}

FeatureVector path_features(const CandidatePath& path, const TrafficEnv& env) {
  const auto& rp = env.config().reward;
  const int eta = path.sample_count();
  FeatureVector h = FeatureVector::Zero();
  if (eta == 0) return h;
  const double dt = path.duration / eta;

  double prev_heading = 0.0;
  for (const auto& s : path.samples) {
    h[kStability] += s.sideslip * s.sideslip;
    const double yaw_rate = (s.heading - prev_heading) / dt;
    h[kComfort] += yaw_rate * yaw_rate;
    prev_heading = s.heading;

    const double y_global = path.y0 + s.y;
    for (const auto& m : env.hdvs()) {
      const double dy = y_global - m.y;
      const double dx = env.wrap_dx(s.x - (m.x + m.speed * s.t));
      h[kCollisionRisk] += std::exp(rp.sigma_lat * dy * dy + rp.sigma_lon * dx * dx);
    }
  }
  h[kStability] /= eta;
  h[kComfort] /= eta;
  h[kCollisionRisk] /= eta;
  h[kTravel] = path.duration * path.duration / eta;
  return h;
}

std::size_t select_path_index(std::span<const FeatureVector> features,
                              std::span<const CandidatePath> candidates,
                              const WeightVector& weights) {
  if (features.empty() || features.size() != candidates.size()) {
    throw Error(ErrorCode::kParameter, "select_path needs matching non-empty candidates");
  }
  std::size_t best = 0;
  double best_reward = weights.dot(features[0]);
  for (std::size_t i = 1; i < features.size(); ++i) {
    const double r = weights.dot(features[i]);
    if (r > best_reward ||
        (r == best_reward && candidates[i].duration < candidates[best].duration)) {
      best = i;
      best_reward = r;
    }
  }
  return best;
}

const CandidatePath& select_path(std::span<const CandidatePath> candidates,
                                 std::span<const FeatureVector> features,
                                 const WeightVector& weights) {
  return candidates[select_path_index(features, candidates, weights)];
}

std::optional<Direction> preferred_direction(const TrafficEnv& env, const PlannerConfig&) {
  const auto& sc = env.config();
  const int lane = env.ego_lane();
  auto space = [&](int target) {
    const LaneGaps g = env.lane_gaps(target);
    return std::min(leader_gap(g.leader), leader_gap(g.follower));
  };
  const bool has_left = lane + 1 < sc.lanes;
  const bool has_right = lane - 1 >= 0;
  if (has_left && has_right) {
    return space(lane + 1) >= space(lane - 1) ? Direction::kLeft : Direction::kRight;
  }
  if (has_left) return Direction::kLeft;
  if (has_right) return Direction::kRight;
  return std::nullopt;
}

void write_candidates_csv(std::ostream& out, std::span<const CandidatePath> candidates,
                          std::span<const FeatureVector> features) {
  out.precision(17);
  out << "kind,id,a,b,c,d,e,f,g\n";
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    out << "H," << i << ',' << c.lateral << ',' << c.longitudinal << ',' << c.duration;
    for (int k = 0; k < 4; ++k) out << ',' << (i < features.size() ? features[i][k] : 0.0);
    out << '\n';
    for (std::size_t l = 0; l < c.samples.size(); ++l) {
      const auto& s = c.samples[l];
      out << "S," << i << ',' << l + 1 << ',' << s.t << ',' << s.x << ',' << s.y << ','
          << s.y_rate << ',' << s.sideslip << ",\n";
    }
  }
}

}  // namespace cruise
