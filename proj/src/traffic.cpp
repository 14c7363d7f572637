#include "cruise/traffic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <tuple>

#include "cruise/error.hpp"

namespace cruise {

namespace {

constexpr double kHdvMaxDecel = 8.0;  // m/s^2, IDM output floor
constexpr double kMinIdmGap = 0.01;   // m
constexpr int kPlacementAttempts = 2000;

// Normalized quintic blend with zero first and second derivatives at both ends.
double smooth_step(double s) { return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s); }
double smooth_step_rate(double s) { return 30.0 * s * s * (1.0 - s) * (1.0 - s); }

}  // namespace

void ScenarioConfig::validate() const {
  auto fail = [](const char* what) { throw Error(ErrorCode::kConfig, what); };
  if (lanes < 2) fail("lane count must be at least 2");
  if (!(lane_width > 0.0)) fail("lane width must be positive");
  if (!(road_length > 0.0)) fail("road length must be positive");
  if (hdv_count < 0) fail("HDV count must be non-negative");
  if (observed_slots < 0) fail("observed slot count must be non-negative");
  if (!(v_min < v_max) || v_min <= 0.0) fail("require 0 < v_min < v_max");
  if (!(ego_speed_min <= ego_speed_max) || ego_speed_min <= kMinSpeed)
    fail("invalid ego speed range");
  if (ego_lane < 0 || ego_lane >= lanes) fail("ego lane out of range");
  if (!(v_min + hdv_speed_margin < v_max - hdv_speed_margin))
    fail("HDV speed margin leaves an empty range");
  if (!(plant_dt > 0.0 && plant_dt <= 0.05)) fail("plant step must lie in (0, 0.05]");
  if (!(decision_interval >= plant_dt)) fail("decision interval shorter than plant step");
  if (!(horizon > 0.0)) fail("episode horizon must be positive");
  if (safe_gap < 0.0) fail("safe gap must be non-negative");
  if (!(hdv_lane_change_duration > 0.0)) fail("HDV lane-change duration must be positive");
  vehicle.validate();
}

int ScenarioConfig::nearest_lane(double y) const {
  const int lane = static_cast<int>(std::floor(y / lane_width));
  return std::clamp(lane, 0, lanes - 1);
}

double idm_free_acceleration(double speed, const IdmParams& p) {
  return p.max_accel * (1.0 - std::pow(speed / p.desired_speed, p.exponent));
}

double idm_acceleration(double gap, double speed, double lead_speed,
                        const IdmParams& p) {
  const double dv = speed - lead_speed;
  const double desired_gap =
      p.min_gap + std::max(0.0, speed * p.time_headway +
                                    speed * dv / (2.0 * std::sqrt(p.max_accel * p.comfort_decel)));
  const double ratio = desired_gap / std::max(gap, kMinIdmGap);
  return p.max_accel *
         (1.0 - std::pow(speed / p.desired_speed, p.exponent) - ratio * ratio);
}

namespace {

double accel_behind(const std::optional<NeighborView>& leader, double speed,
                    const IdmParams& idm) {
  if (!leader) return idm_free_acceleration(speed, idm);
  return idm_acceleration(leader->gap, speed, leader->speed, idm);
}

// Incentive of moving into `target`; NaN when the safety criterion fails.
double mobil_incentive(const MobilQuery& q, const LaneNeighbors& target,
                       const MobilParams& params) {
  if (target.leader && target.leader->gap <= 0.0) return std::nan("");
  if (target.follower && target.follower->gap <= 0.0) return std::nan("");

  const double own_now = accel_behind(q.current.leader, q.speed, q.idm);
  const double own_after = accel_behind(target.leader, q.speed, q.idm);

  double new_follower_gain = 0.0;
  if (target.follower) {
    const NeighborView& nf = *target.follower;
    std::optional<NeighborView> nf_leader_now;
    if (target.leader) {
      nf_leader_now = NeighborView{nf.gap + q.length + target.leader->gap,
                                   target.leader->speed, target.leader->idm};
    }
    const double before = accel_behind(nf_leader_now, nf.speed, nf.idm);
    const double after = idm_acceleration(nf.gap, nf.speed, q.speed, nf.idm);
    if (after < -params.safe_decel) return std::nan("");
    new_follower_gain = after - before;
  }

  double old_follower_gain = 0.0;
  if (q.current.follower) {
    const NeighborView& of = *q.current.follower;
    const double before = idm_acceleration(of.gap, of.speed, q.speed, of.idm);
    std::optional<NeighborView> of_leader_after;
    if (q.current.leader) {
      of_leader_after = NeighborView{of.gap + q.length + q.current.leader->gap,
                                     q.current.leader->speed, q.current.leader->idm};
    }
    const double after = accel_behind(of_leader_after, of.speed, of.idm);
    old_follower_gain = after - before;
  }

  return own_after - own_now +
         params.politeness * (new_follower_gain + old_follower_gain);
}

}  // namespace

LaneDecision mobil_lane_change(const MobilQuery& query,
                               const MobilParams& params) {
  double best = params.threshold;
  LaneDecision decision = LaneDecision::kStay;
  if (query.left) {
    const double gain = mobil_incentive(query, *query.left, params);
    if (!std::isnan(gain) && gain > best) {
      best = gain;
      decision = LaneDecision::kLeft;
    }
  }
  if (query.right) {
    const double gain = mobil_incentive(query, *query.right, params);
    if (!std::isnan(gain) && gain > best) {
      decision = LaneDecision::kRight;
    }
  }
  return decision;
}

bool footprints_overlap(const Footprint& a, const Footprint& b) {
  auto corners = [](const Footprint& f) {
    const double c = std::cos(f.heading), s = std::sin(f.heading);
    const double hl = 0.5 * f.length, hw = 0.5 * f.width;
    std::array<Eigen::Vector2d, 4> pts;
    const std::array<std::pair<double, double>, 4> signs = {
        {{1, 1}, {1, -1}, {-1, -1}, {-1, 1}}};
    for (int i = 0; i < 4; ++i) {
      const double lx = signs[i].first * hl, ly = signs[i].second * hw;
      pts[i] = {f.x + c * lx - s * ly, f.y + s * lx + c * ly};
    }
    return pts;
  };
  const auto pa = corners(a);
  const auto pb = corners(b);
  const std::array<Eigen::Vector2d, 4> axes = {
      Eigen::Vector2d(std::cos(a.heading), std::sin(a.heading)),
      Eigen::Vector2d(-std::sin(a.heading), std::cos(a.heading)),
      Eigen::Vector2d(std::cos(b.heading), std::sin(b.heading)),
      Eigen::Vector2d(-std::sin(b.heading), std::cos(b.heading))};
  for (const auto& axis : axes) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin;
    double bmin = amin, bmax = -amin;
    for (const auto& p : pa) {
      const double d = axis.dot(p);
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (const auto& p : pb) {
      const double d = axis.dot(p);
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax < bmin || bmax < amin) return false;
  }
  return true;
}

TrafficEnv::TrafficEnv(ScenarioConfig config) : config_(std::move(config)) {
  config_.validate();
  ego_idm_ = config_.idm;
  ego_idm_.desired_speed = config_.v_max;
  reset(config_.seed);
}

void TrafficEnv::reset(std::uint64_t seed) {
  const auto& c = config_;
  const double spacing = c.safe_gap + c.vehicle.length;
  const int per_lane = static_cast<int>(std::floor(c.road_length / spacing));
  if (c.hdv_count > c.lanes * per_lane - 1) {
    throw Error(ErrorCode::kConfig, "cannot place the requested HDV count with the safe gap");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ego_speed(c.ego_speed_min, c.ego_speed_max);
  std::uniform_real_distribution<double> hdv_speed(c.v_min + c.hdv_speed_margin,
                                                   c.v_max - c.hdv_speed_margin);
  std::uniform_int_distribution<int> lane_pick(0, c.lanes - 1);
  std::uniform_real_distribution<double> position(0.0, c.road_length);

  ego_ = VehicleState{};
  ego_intent_ = -1;
  ego_.vx = ego_speed(rng);
  ego_.y = c.lane_center(c.ego_lane);

  hdvs_.clear();
  hdvs_.reserve(c.hdv_count);
  for (int i = 0; i < c.hdv_count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const int lane = lane_pick(rng);
      const double x = position(rng);
      bool clear = !(lane == c.ego_lane && std::abs(wrap_dx(x - ego_.x)) < spacing);
      for (const auto& other : hdvs_) {
        if (other.lane == lane && std::abs(wrap_dx(x - other.x)) < spacing) clear = false;
      }
      if (!clear) continue;
      HdvState h;
      h.lane = h.target_lane = lane;
      h.x = x;
      h.y = c.lane_center(lane);
      h.speed = hdv_speed(rng);
      h.idm = c.idm;
      h.idm.desired_speed = hdv_speed(rng);
      hdvs_.push_back(h);
      placed = true;
    }
    if (!placed) {
      throw Error(ErrorCode::kConfig, "HDV placement failed: traffic too dense");
    }
  }
  time_ = 0.0;
  collided_ = detect_collision();
}

void TrafficEnv::set_state(const VehicleState& ego, std::vector<HdvState> hdvs,
                           double time) {
  ego_ = ego;
  hdvs_ = std::move(hdvs);
  time_ = time;
  collided_ = detect_collision();
}

double TrafficEnv::wrap_dx(double dx) const {
  const double length = config_.road_length;
  double w = std::fmod(dx + 0.5 * length, length);
  if (w < 0.0) w += length;
  return w - 0.5 * length;
}

bool TrafficEnv::occupies(double y, int lane) const {
  const double half = 0.5 * config_.vehicle.width;
  const double lo = lane * config_.lane_width;
  const double hi = lo + config_.lane_width;
  return y + half > lo + 1e-9 && y - half < hi - 1e-9;
}

std::vector<TrafficEnv::Body> TrafficEnv::bodies() const {
  std::vector<Body> out;
  out.reserve(hdvs_.size() + 1);
  out.push_back({-1, ego_.x, ego_.y, ego_.vx, &ego_idm_, ego_intent_});
  for (int i = 0; i < static_cast<int>(hdvs_.size()); ++i) {
    const auto& h = hdvs_[i];
    out.push_back({i, h.x, h.y, h.speed, &h.idm, h.changing() ? h.target_lane : -1});
  }
  return out;
}

std::optional<std::pair<double, const TrafficEnv::Body*>> TrafficEnv::nearest_ahead(
    const std::vector<Body>& bodies, int self, double x, int lane) const {
  std::optional<std::pair<double, const Body*>> best;
  const double length = config_.road_length;
  for (const auto& b : bodies) {
    if (b.id == self || !in_lane(b, lane)) continue;
    double dx = std::fmod(b.x - x, length);
    if (dx < 0.0) dx += length;
    if (!best || dx < best->first) best = std::make_pair(dx, &b);
  }
  return best;
}

std::optional<std::pair<double, const TrafficEnv::Body*>> TrafficEnv::nearest_behind(
    const std::vector<Body>& bodies, int self, double x, int lane) const {
  std::optional<std::pair<double, const Body*>> best;
  const double length = config_.road_length;
  for (const auto& b : bodies) {
    if (b.id == self || !in_lane(b, lane)) continue;
    double dx = std::fmod(x - b.x, length);
    if (dx < 0.0) dx += length;
    if (!best || dx < best->first) best = std::make_pair(dx, &b);
  }
  return best;
}

double TrafficEnv::hdv_acceleration(const std::vector<Body>& bodies, int index) const {
  const HdvState& h = hdvs_[index];
  const double len = config_.vehicle.length;
  double accel = idm_free_acceleration(h.speed, h.idm);
  for (int lane = 0; lane < config_.lanes; ++lane) {
    if (!occupies(h.y, lane) && lane != h.target_lane) continue;
    if (auto lead = nearest_ahead(bodies, index, h.x, lane)) {
      accel = std::min(accel, idm_acceleration(lead->first - len, h.speed,
                                               lead->second->speed, h.idm));
    }
  }
  return std::max(accel, -kHdvMaxDecel);
}

LaneDecision TrafficEnv::hdv_lane_decision(const std::vector<Body>& bodies,
                                           int index) const {
  const HdvState& h = hdvs_[index];
  const double len = config_.vehicle.length;
  auto view = [&](const std::optional<std::pair<double, const Body*>>& hit)
      -> std::optional<NeighborView> {
    if (!hit) return std::nullopt;
    return NeighborView{hit->first - len, hit->second->speed, *hit->second->idm};
  };
  auto neighbors = [&](int lane) {
    LaneNeighbors n;
    n.leader = view(nearest_ahead(bodies, index, h.x, lane));
    n.follower = view(nearest_behind(bodies, index, h.x, lane));
    return n;
  };

  MobilQuery q;
  q.speed = h.speed;
  q.length = len;
  q.idm = h.idm;
  q.current = neighbors(h.lane);
  if (h.lane + 1 < config_.lanes) q.left = neighbors(h.lane + 1);
  if (h.lane - 1 >= 0) q.right = neighbors(h.lane - 1);
  return mobil_lane_change(q, config_.mobil);
}

void TrafficEnv::step(const ControlInput& ego_control, double dt) {
  const auto snapshot = bodies();
  std::vector<double> accel(hdvs_.size());
  std::vector<LaneDecision> decisions(hdvs_.size(), LaneDecision::kStay);
  for (int i = 0; i < static_cast<int>(hdvs_.size()); ++i) {
    accel[i] = hdv_acceleration(snapshot, i);
    if (!hdvs_[i].changing() && hdvs_[i].cooldown <= 0.0) {
      decisions[i] = hdv_lane_decision(snapshot, i);
    }
  }

  ego_ = step_dynamics(ego_, ego_control, dt, config_.vehicle);

  for (int i = 0; i < static_cast<int>(hdvs_.size()); ++i) {
    HdvState& h = hdvs_[i];
    const double v_next = std::max(0.0, h.speed + accel[i] * dt);
    h.x += 0.5 * (h.speed + v_next) * dt;
    h.speed = v_next;
    h.cooldown = std::max(0.0, h.cooldown - dt);

    if (decisions[i] != LaneDecision::kStay) {
      h.target_lane = h.lane + (decisions[i] == LaneDecision::kLeft ? 1 : -1);
      h.change_elapsed = 0.0;
      h.change_start_y = h.y;
    }
    if (h.changing()) {
      h.change_elapsed += dt;
      const double s = std::min(1.0, h.change_elapsed / config_.hdv_lane_change_duration);
      const double target_y = config_.lane_center(h.target_lane);
      h.y = h.change_start_y + (target_y - h.change_start_y) * smooth_step(s);
      if (s >= 1.0) {
        h.lane = h.target_lane;
        h.y = target_y;
        h.change_elapsed = -1.0;
        h.cooldown = config_.hdv_lane_change_cooldown;
      }
    }
  }
  time_ += dt;
  collided_ = collided_ || detect_collision();
}

Footprint TrafficEnv::ego_footprint() const {
  return {ego_.x, ego_.y, ego_.yaw, config_.vehicle.length, config_.vehicle.width};
}

Footprint TrafficEnv::hdv_footprint(const HdvState& h) const {
  double heading = 0.0;
  if (h.changing() && h.speed > 0.0) {
    const double T = config_.hdv_lane_change_duration;
    const double s = std::min(1.0, h.change_elapsed / T);
    const double lateral_rate =
        (config_.lane_center(h.target_lane) - h.change_start_y) * smooth_step_rate(s) / T;
    heading = std::atan2(lateral_rate, h.speed);
  }
  return {h.x, h.y, heading, config_.vehicle.length, config_.vehicle.width};
}

bool TrafficEnv::detect_collision() const {
  const Footprint ego = ego_footprint();
  for (const auto& h : hdvs_) {
    Footprint other = hdv_footprint(h);
    other.x = ego.x + wrap_dx(h.x - ego.x);
    if (footprints_overlap(ego, other)) return true;
  }
  return false;
}

bool TrafficEnv::off_road() const {
  const double half = 0.5 * config_.vehicle.width;
  return ego_.y - half < 0.0 || ego_.y + half > config_.road_width();
}

std::optional<LeaderInfo> TrafficEnv::ego_leader() const {
  const auto all = bodies();
  std::optional<LeaderInfo> best;
  for (int lane = 0; lane < config_.lanes; ++lane) {
    if (!occupies(ego_.y, lane)) continue;
    if (auto lead = nearest_ahead(all, -1, ego_.x, lane)) {
      const double gap = lead->first - config_.vehicle.length;
      if (!best || gap < best->gap) best = LeaderInfo{gap, lead->second->speed};
    }
  }
  return best;
}

void TrafficEnv::set_ego_intent(int lane) {
  if (lane < -1 || lane >= config_.lanes) throw Error(ErrorCode::kRange, "lane index out of range");
  ego_intent_ = lane;
}

LaneGaps TrafficEnv::lane_gaps(int lane) const {
  if (lane < 0 || lane >= config_.lanes) {
    throw Error(ErrorCode::kRange, "lane index out of range");
  }
  const auto all = bodies();
  const double len = config_.vehicle.length;
  LaneGaps gaps;
  if (auto lead = nearest_ahead(all, -1, ego_.x, lane)) {
    gaps.leader = LeaderInfo{lead->first - len, lead->second->speed};
  }
  if (auto follow = nearest_behind(all, -1, ego_.x, lane)) {
    gaps.follower = LeaderInfo{follow->first - len, follow->second->speed};
  }
  return gaps;
}

MdpState TrafficEnv::observe() const {
  const auto& c = config_;
  const double y_scale = c.normalize_observation ? c.road_width() : 1.0;
  const double x_scale = c.normalize_observation ? c.road_length : 1.0;
  const double v_scale = c.normalize_observation ? c.v_max : 1.0;

  double ego_x = std::fmod(ego_.x, c.road_length);
  if (ego_x < 0.0) ego_x += c.road_length;

  MdpState state;
  state.values.reserve(3 * (c.observed_slots + 1));
  state.values.push_back(ego_.y / y_scale);
  state.values.push_back(ego_x / x_scale);
  state.values.push_back(ego_.vx / v_scale);

  // Relative triples (ego minus HDV), nearest longitudinal distance first.
  std::vector<std::array<double, 3>> rel;
  rel.reserve(hdvs_.size());
  for (const auto& h : hdvs_) {
    rel.push_back({ego_.y - h.y, -wrap_dx(h.x - ego_.x), ego_.vx - h.speed});
  }
  std::sort(rel.begin(), rel.end(), [](const auto& a, const auto& b) {
    return std::make_tuple(std::abs(a[1]), a[1], a[0], a[2]) <
           std::make_tuple(std::abs(b[1]), b[1], b[0], b[2]);
  });
  for (int slot = 0; slot < c.observed_slots; ++slot) {
    if (slot < static_cast<int>(rel.size())) {
      state.values.push_back(rel[slot][0] / y_scale);
      state.values.push_back(rel[slot][1] / x_scale);
      state.values.push_back(rel[slot][2] / v_scale);
    } else {
      state.values.push_back(0.0);
      state.values.push_back(-0.5 * c.road_length / x_scale);
      state.values.push_back(0.0);
    }
  }
  return state;
}

RewardBreakdown TrafficEnv::compute_reward() const {
  const auto& c = config_;
  const auto& rp = c.reward;
  RewardBreakdown r;
  r.speed = std::clamp((ego_.vx - c.v_min) / (c.v_max - c.v_min), 0.0, 1.0);
  for (const auto& h : hdvs_) {
    const double dy = ego_.y - h.y;
    const double dx = wrap_dx(ego_.x - h.x);
    r.collision += std::exp(rp.sigma_lat * dy * dy + rp.sigma_lon * dx * dx);
  }
  const double mid = c.lane_center(c.nearest_lane(ego_.y));
  const double off = ego_.y - mid;
  r.lane = std::min(rp.lane_clamp,
                    rp.lane_gain * std::exp(off * off / (2.0 * rp.sigma_lane * rp.sigma_lane)));
  r.total = rp.w_speed * r.speed + rp.w_collision * r.collision + rp.w_lane * r.lane;
  return r;
}

}  // namespace cruise
