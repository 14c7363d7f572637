#include "cruise/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

#include "cruise/error.hpp"

namespace cruise {

namespace {

using nlohmann::json;

template <typename T>
void read(const json& j, const char* key, T& field) {
  if (auto it = j.find(key); it != j.end()) field = it->get<T>();
}

template <typename T, std::size_t N>
void read_array(const json& j, const char* key, std::array<T, N>& field) {
  if (auto it = j.find(key); it != j.end()) {
    if (!it->is_array() || it->size() != N) {
      throw Error(ErrorCode::kConfig, std::string("'") + key + "' must have " +
                                          std::to_string(N) + " entries");
    }
    for (std::size_t i = 0; i < N; ++i) field[i] = (*it)[i].get<T>();
  }
}

void read_weights(const json& j, const char* key, WeightVector& w) {
  std::array<double, 4> a{w[0], w[1], w[2], w[3]};
  read_array(j, key, a);
  w = WeightVector(a[0], a[1], a[2], a[3]);
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  auto it = j.find(key);
  if (it == j.end()) return empty;
  if (!it->is_object()) throw Error(ErrorCode::kConfig, std::string("'") + key + "' must be an object");
  return *it;
}

void apply(const json& root, ExperimentConfig& c) {
  {
    const json& s = section(root, "scenario");
    auto& sc = c.scenario;
    read(s, "lanes", sc.lanes);
    read(s, "lane_width", sc.lane_width);
    read(s, "road_length", sc.road_length);
    read(s, "hdv_count", sc.hdv_count);
    read(s, "observed_slots", sc.observed_slots);
    read(s, "v_min", sc.v_min);
    read(s, "v_max", sc.v_max);
    read(s, "ego_speed_min", sc.ego_speed_min);
    read(s, "ego_speed_max", sc.ego_speed_max);
    read(s, "ego_lane", sc.ego_lane);
    read(s, "hdv_speed_margin", sc.hdv_speed_margin);
    read(s, "horizon", sc.horizon);
    read(s, "decision_interval", sc.decision_interval);
    read(s, "plant_dt", sc.plant_dt);
    read(s, "safe_gap", sc.safe_gap);
    read(s, "hdv_lane_change_duration", sc.hdv_lane_change_duration);
    read(s, "hdv_lane_change_cooldown", sc.hdv_lane_change_cooldown);
    read(s, "normalize_observation", sc.normalize_observation);
    read(s, "seed", sc.seed);
    const json& idm = section(s, "idm");
    read(idm, "time_headway", sc.idm.time_headway);
    read(idm, "max_accel", sc.idm.max_accel);
    read(idm, "comfort_decel", sc.idm.comfort_decel);
    read(idm, "min_gap", sc.idm.min_gap);
    read(idm, "exponent", sc.idm.exponent);
    const json& mobil = section(s, "mobil");
    read(mobil, "politeness", sc.mobil.politeness);
    read(mobil, "threshold", sc.mobil.threshold);
    read(mobil, "safe_decel", sc.mobil.safe_decel);
    const json& r = section(s, "reward");
    read(r, "w_speed", sc.reward.w_speed);
    read(r, "w_collision", sc.reward.w_collision);
    read(r, "w_lane", sc.reward.w_lane);
    read(r, "sigma_lat", sc.reward.sigma_lat);
    read(r, "sigma_lon", sc.reward.sigma_lon);
    read(r, "sigma_lane", sc.reward.sigma_lane);
    read(r, "lane_gain", sc.reward.lane_gain);
    read(r, "lane_clamp", sc.reward.lane_clamp);
    const json& v = section(s, "vehicle");
    read(v, "mass", sc.vehicle.mass);
    read(v, "yaw_inertia", sc.vehicle.yaw_inertia);
    read(v, "lf", sc.vehicle.lf);
    read(v, "lr", sc.vehicle.lr);
    read(v, "kf", sc.vehicle.kf);
    read(v, "kr", sc.vehicle.kr);
    read(v, "mu", sc.vehicle.mu);
    read(v, "g", sc.vehicle.g);
    read(v, "length", sc.vehicle.length);
    read(v, "width", sc.vehicle.width);
  }
  {
    const json& p = section(root, "planner");
    read(p, "sample_interval", c.planner.sample_interval);
    read(p, "tc_floor", c.planner.tc_floor);
    read(p, "tc_cap", c.planner.tc_cap);
    read(p, "max_decel", c.planner.max_decel);
    read(p, "sideslip_factor", c.planner.sideslip_factor);
    read(p, "braking_margin", c.planner.braking_margin);
  }
  {
    const json& m = section(root, "control");
    auto& l = c.limits;
    read(m, "ax_min", l.ax_min);
    read(m, "ax_max", l.ax_max);
    read(m, "steer_min", l.steer_min);
    read(m, "steer_max", l.steer_max);
    read(m, "vx_min", l.vx_min);
    read(m, "vx_max", l.vx_max);
    read(m, "safe_gap", l.safe_gap);
    read(m, "horizon", l.horizon);
    read(m, "period", l.period);
    read(m, "terminal_braking", l.terminal_braking);
    read_array(m, "p1_levels", c.presets.p1);
    read_array(m, "p21_levels", c.presets.p21);
    read_array(m, "r2_levels", c.presets.r2);
    read(m, "r1_ratio", c.presets.r1_ratio);
    read(m, "p22_ratio", c.presets.p22_ratio);
    read(m, "pi_kp", c.pi.kp);
    read(m, "pi_ki", c.pi.ki);
  }
  {
    const json& a = section(root, "agent");
    auto& ag = c.agent;
    read(a, "heads", ag.heads);
    read(a, "gamma", ag.gamma);
    read(a, "learning_rate", ag.learning_rate);
    read(a, "target_period", ag.target_period);
    read(a, "batch", ag.batch);
    read(a, "capacity", ag.capacity);
    read(a, "mask_probability", ag.mask_probability);
    read(a, "episodes", ag.episodes);
    read(a, "epsilon_start", ag.epsilon_start);
    read(a, "epsilon_end", ag.epsilon_end);
    read(a, "epsilon_fraction", ag.epsilon_fraction);
    read(a, "double_dqn", ag.double_dqn);
    read(a, "train_every", ag.train_every);
    read(a, "shared_layers", ag.shared_layers);
    read(a, "head_layers", ag.head_layers);
    read(a, "seed", ag.seed);
  }
  {
    const json& i = section(root, "irl");
    read(i, "learning_rate", c.irl.learning_rate);
    read(i, "episodes", c.irl.episodes);
    read_weights(i, "initial", c.irl.initial);
    read(i, "divergence_limit", c.irl.divergence_limit);
    read(i, "ridge", c.irl.ridge);
    if (i.contains("update")) {
      const std::string u = i.at("update").get<std::string>();
      if (u == "gradient") c.irl.update = IrlUpdate::kGradient;
      else if (u == "natural") c.irl.update = IrlUpdate::kNatural;
      else throw Error(ErrorCode::kConfig, "irl.update must be gradient or natural");
    }
    read_weights(i, "true_weights", c.synth.true_weights);
    read(i, "train_count", c.synth.train_count);
    read(i, "eval_count", c.synth.eval_count);
    read(i, "choice_noise", c.synth.choice_noise);
    read(i, "seed", c.synth.seed);
    read_weights(i, "weights", c.irl_weights);
  }
  {
    const json& h = section(root, "harness");
    read(h, "eval_seeds", c.harness.eval_seeds);
    read(h, "eval_seed_base", c.harness.eval_seed_base);
    read(h, "collision_eval_seeds", c.harness.collision_eval_seeds);
    read(h, "sequential_duration", c.harness.sequential_duration);
    read(h, "threads", c.harness.threads);
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  scenario.validate();
  limits.validate();
  agent.validate();
  if (!irl_weights.allFinite()) throw Error(ErrorCode::kConfig, "IRL weights must be finite");
  if (harness.eval_seeds < 1 || harness.collision_eval_seeds < 1) {
    throw Error(ErrorCode::kConfig, "evaluation seed counts must be positive");
  }
  if (!(harness.sequential_duration > 0.0)) {
    throw Error(ErrorCode::kConfig, "sequential lane-change time must be positive");
  }
  if (!(planner.tc_floor > 0.0 && planner.tc_floor < planner.tc_cap) ||
      !(planner.sample_interval > 0.0)) {
    throw Error(ErrorCode::kConfig, "invalid planner duration range");
  }
  const double ratio = scenario.decision_interval / limits.period;
  const double plant = limits.period / scenario.plant_dt;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 || std::abs(plant - std::round(plant)) > 1e-9) {
    throw Error(ErrorCode::kConfig,
                "decision interval, control period and plant step must be integer multiples");
  }
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.synth.true_weights = c.irl_weights;
  c.limits.vx_min = c.scenario.v_min;
  c.limits.vx_max = c.scenario.v_max;
  c.limits.safe_gap = c.scenario.safe_gap;
  return c;
}

ExperimentConfig config_from_json_text(const std::string& text) {
  ExperimentConfig c = default_config();
  try {
    const json root = json::parse(text);
    if (!root.is_object()) throw Error(ErrorCode::kConfig, "config root must be an object");
    apply(root, c);
    // Keep the controller's speed box and spacing tied to the scenario unless
    // the control block overrides them.
    const json& ctl = section(root, "control");
    if (!ctl.contains("vx_min")) c.limits.vx_min = c.scenario.v_min;
    if (!ctl.contains("vx_max")) c.limits.vx_max = c.scenario.v_max;
    if (!ctl.contains("safe_gap")) c.limits.safe_gap = c.scenario.safe_gap;
    if (!section(root, "irl").contains("true_weights")) c.synth.true_weights = c.irl_weights;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json_text(ss.str());
}

std::string config_to_json_text(const ExperimentConfig& c) {
  const auto& sc = c.scenario;
  auto w4 = [](const WeightVector& w) { return json::array({w[0], w[1], w[2], w[3]}); };
  json j;
  j["scenario"] = {
      {"lanes", sc.lanes}, {"lane_width", sc.lane_width}, {"road_length", sc.road_length},
      {"hdv_count", sc.hdv_count}, {"observed_slots", sc.observed_slots},
      {"v_min", sc.v_min}, {"v_max", sc.v_max}, {"ego_speed_min", sc.ego_speed_min},
      {"ego_speed_max", sc.ego_speed_max}, {"ego_lane", sc.ego_lane},
      {"hdv_speed_margin", sc.hdv_speed_margin}, {"horizon", sc.horizon},
      {"decision_interval", sc.decision_interval}, {"plant_dt", sc.plant_dt},
      {"safe_gap", sc.safe_gap}, {"hdv_lane_change_duration", sc.hdv_lane_change_duration},
      {"hdv_lane_change_cooldown", sc.hdv_lane_change_cooldown},
      {"normalize_observation", sc.normalize_observation}, {"seed", sc.seed},
      {"idm", {{"time_headway", sc.idm.time_headway}, {"max_accel", sc.idm.max_accel},
               {"comfort_decel", sc.idm.comfort_decel}, {"min_gap", sc.idm.min_gap},
               {"exponent", sc.idm.exponent}}},
      {"mobil", {{"politeness", sc.mobil.politeness}, {"threshold", sc.mobil.threshold},
                 {"safe_decel", sc.mobil.safe_decel}}},
      {"reward", {{"w_speed", sc.reward.w_speed}, {"w_collision", sc.reward.w_collision},
                  {"w_lane", sc.reward.w_lane}, {"sigma_lat", sc.reward.sigma_lat},
                  {"sigma_lon", sc.reward.sigma_lon}, {"sigma_lane", sc.reward.sigma_lane},
                  {"lane_gain", sc.reward.lane_gain}, {"lane_clamp", sc.reward.lane_clamp}}},
      {"vehicle", {{"mass", sc.vehicle.mass}, {"yaw_inertia", sc.vehicle.yaw_inertia},
                   {"lf", sc.vehicle.lf}, {"lr", sc.vehicle.lr}, {"kf", sc.vehicle.kf},
                   {"kr", sc.vehicle.kr}, {"mu", sc.vehicle.mu}, {"g", sc.vehicle.g},
                   {"length", sc.vehicle.length}, {"width", sc.vehicle.width}}}};
  j["planner"] = {{"sample_interval", c.planner.sample_interval},
                  {"tc_floor", c.planner.tc_floor},
                  {"tc_cap", c.planner.tc_cap},
                  {"max_decel", c.planner.max_decel},
                  {"sideslip_factor", c.planner.sideslip_factor},
                  {"braking_margin", c.planner.braking_margin}};
  const auto& l = c.limits;
  j["control"] = {{"ax_min", l.ax_min}, {"ax_max", l.ax_max}, {"steer_min", l.steer_min},
                  {"steer_max", l.steer_max}, {"vx_min", l.vx_min}, {"vx_max", l.vx_max},
                  {"safe_gap", l.safe_gap}, {"horizon", l.horizon}, {"period", l.period},
                  {"terminal_braking", l.terminal_braking},
                  {"p1_levels", c.presets.p1}, {"p21_levels", c.presets.p21},
                  {"r2_levels", c.presets.r2}, {"r1_ratio", c.presets.r1_ratio},
                  {"p22_ratio", c.presets.p22_ratio}, {"pi_kp", c.pi.kp}, {"pi_ki", c.pi.ki}};
  const auto& a = c.agent;
  j["agent"] = {{"heads", a.heads}, {"gamma", a.gamma}, {"learning_rate", a.learning_rate},
                {"target_period", a.target_period}, {"batch", a.batch},
                {"capacity", a.capacity}, {"mask_probability", a.mask_probability},
                {"episodes", a.episodes}, {"epsilon_start", a.epsilon_start},
                {"epsilon_end", a.epsilon_end}, {"epsilon_fraction", a.epsilon_fraction},
                {"double_dqn", a.double_dqn}, {"train_every", a.train_every},
                {"shared_layers", a.shared_layers}, {"head_layers", a.head_layers},
                {"seed", a.seed}};
  j["irl"] = {{"learning_rate", c.irl.learning_rate}, {"episodes", c.irl.episodes},
              {"initial", w4(c.irl.initial)}, {"divergence_limit", c.irl.divergence_limit},
              {"ridge", c.irl.ridge},
              {"update", c.irl.update == IrlUpdate::kNatural ? "natural" : "gradient"},
              {"true_weights", w4(c.synth.true_weights)}, {"train_count", c.synth.train_count},
              {"eval_count", c.synth.eval_count}, {"choice_noise", c.synth.choice_noise},
              {"seed", c.synth.seed}, {"weights", w4(c.irl_weights)}};
  j["harness"] = {{"eval_seeds", c.harness.eval_seeds},
                  {"eval_seed_base", c.harness.eval_seed_base},
                  {"collision_eval_seeds", c.harness.collision_eval_seeds},
                  {"sequential_duration", c.harness.sequential_duration},
                  {"threads", c.harness.threads}};
  return j.dump(2);
}

}  // namespace cruise
