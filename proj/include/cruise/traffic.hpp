#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "cruise/dynamics.hpp"

namespace cruise {

struct IdmParams {
  double desired_speed = 30.0;  // v0, m/s
  double time_headway = 1.5;    // T, s
  double max_accel = 1.5;       // a, m/s^2
  double comfort_decel = 2.0;   // b, m/s^2
  double min_gap = 2.0;         // s0, m
  double exponent = 4.0;        // delta
};

struct MobilParams {
  double politeness = 0.3;
  double threshold = 0.1;    // m/s^2
  double safe_decel = 4.0;   // b_safe, m/s^2
};

/// Shaped reward coefficients. sigma_lat/sigma_lon scale (dY)^2 and (dX)^2 in
/// the potential field; sigma_lane is the Gaussian width of the lane term.
struct RewardParams {
  double w_speed = 20.0;
  double w_collision = -5.0;
  double w_lane = -0.1;
  double sigma_lat = -3.0;
  double sigma_lon = -0.5;
  double sigma_lane = -0.1;
  double lane_gain = 2.5;
  double lane_clamp = 10.0;
};

struct ScenarioConfig {
  int lanes = 3;
  double lane_width = 3.75;
  double road_length = 400.0;  // circumference of the periodic road
  int hdv_count = 6;
  int observed_slots = 6;
  double v_min = 16.67;
  double v_max = 33.33;
  double ego_speed_min = 20.0;
  double ego_speed_max = 30.0;
  int ego_lane = 1;
  double hdv_speed_margin = 2.0;  // HDV speeds ~ U(v_min + m, v_max - m)
  double horizon = 40.0;
  double decision_interval = 0.1;
  double plant_dt = 0.01;
  double safe_gap = 15.0;
  double hdv_lane_change_duration = 3.0;
  double hdv_lane_change_cooldown = 2.0;
  bool normalize_observation = true;
  std::uint64_t seed = 1;
  IdmParams idm;
  MobilParams mobil;
  RewardParams reward;
  VehicleParams vehicle;

  void validate() const;
  double road_width() const { return lanes * lane_width; }
  double lane_center(int lane) const { return (lane + 0.5) * lane_width; }
  int nearest_lane(double y) const;
};

struct HdvState {
  int lane = 0;
  int target_lane = 0;
  double x = 0.0;
  double y = 0.0;
  double speed = 0.0;
  IdmParams idm;
  double change_elapsed = -1.0;  // < 0 when not changing lanes
  double change_start_y = 0.0;
  double cooldown = 0.0;

  bool changing() const { return change_elapsed >= 0.0; }
};

/// Ego triple [Y, X, V] followed by one relative triple per observed slot.
struct MdpState {
  std::vector<double> values;
};

struct RewardBreakdown {
  double speed = 0.0;
  double collision = 0.0;
  double lane = 0.0;
  double total = 0.0;
};

double idm_acceleration(double gap, double speed, double lead_speed,
                        const IdmParams& params);

/// Free-road IDM acceleration (no leader).
double idm_free_acceleration(double speed, const IdmParams& params);

struct NeighborView {
  double gap = 0.0;  // bumper to bumper, m
  double speed = 0.0;
  IdmParams idm;
};

struct LaneNeighbors {
  std::optional<NeighborView> leader;
  std::optional<NeighborView> follower;
};

struct MobilQuery {
  double speed = 0.0;
  double length = 4.5;
  IdmParams idm;
  LaneNeighbors current;
  std::optional<LaneNeighbors> left;
  std::optional<LaneNeighbors> right;
};

enum class LaneDecision { kStay, kLeft, kRight };

LaneDecision mobil_lane_change(const MobilQuery& query,
                               const MobilParams& params);

struct LeaderInfo {
  double gap = 0.0;  // bumper to bumper, m
  double speed = 0.0;
};

struct LaneGaps {
  std::optional<LeaderInfo> leader;
  std::optional<LeaderInfo> follower;
};

/// Oriented rectangle footprint used for collision tests.
struct Footprint {
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double length = 0.0;
  double width = 0.0;
};

bool footprints_overlap(const Footprint& a, const Footprint& b);

/// Multi-lane periodic highway with one ego vehicle and IDM/MOBIL traffic.
class TrafficEnv {
 public:
  explicit TrafficEnv(ScenarioConfig config);

  /// Places the ego mid-lane and the HDVs with gaps >= safe_gap.
  void reset(std::uint64_t seed);
  void step(const ControlInput& ego_control, double dt);

  MdpState observe() const;
  RewardBreakdown compute_reward() const;

  bool collided() const { return collided_; }
  bool off_road() const;
  double time() const { return time_; }

  const ScenarioConfig& config() const { return config_; }
  const VehicleState& ego() const { return ego_; }
  std::span<const HdvState> hdvs() const { return hdvs_; }
  int ego_lane() const { return config_.nearest_lane(ego_.y); }

  /// Overrides the full state; collision flag is recomputed.
  void set_state(const VehicleState& ego, std::vector<HdvState> hdvs,
                 double time = 0.0);

  /// Signed longitudinal offset wrapped into [-L/2, L/2).
  double wrap_dx(double dx) const;

  Footprint ego_footprint() const;
  Footprint hdv_footprint(const HdvState& hdv) const;

  /// Nearest leader among vehicles sharing a lane with the ego footprint.
  std::optional<LeaderInfo> ego_leader() const;

  /// Lane the ego is changing into, or -1. A vehicle changing lanes counts as
  /// occupying its target lane for every neighbor query, like a turn signal.
  void set_ego_intent(int lane);
  int ego_intent() const { return ego_intent_; }

  /// Nearest leader and follower of the ego on `lane` (ego excluded).
  LaneGaps lane_gaps(int lane) const;

 private:
  struct Body {
    int id;  // -1 for the ego
    double x;
    double y;
    double speed;
    const IdmParams* idm;
    int intent;  // target lane while changing, else -1
  };

  std::vector<Body> bodies() const;
  bool occupies(double y, int lane) const;
  bool in_lane(const Body& b, int lane) const { return b.intent == lane || occupies(b.y, lane); }
  std::optional<std::pair<double, const Body*>> nearest_ahead(
      const std::vector<Body>& bodies, int self, double x, int lane) const;
  std::optional<std::pair<double, const Body*>> nearest_behind(
      const std::vector<Body>& bodies, int self, double x, int lane) const;
  double hdv_acceleration(const std::vector<Body>& bodies, int index) const;
  LaneDecision hdv_lane_decision(const std::vector<Body>& bodies,
                                 int index) const;
  bool detect_collision() const;

  ScenarioConfig config_;
  IdmParams ego_idm_;
  VehicleState ego_;
  int ego_intent_ = -1;
  std::vector<HdvState> hdvs_;
  double time_ = 0.0;
  bool collided_ = false;
};

}  // namespace cruise
