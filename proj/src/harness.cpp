#include "cruise/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "cruise/error.hpp"

namespace cruise {

std::string to_string(FrameworkVariant v) {
  switch (v) {
    case FrameworkVariant::kIntegrated: return "integrated";
    case FrameworkVariant::kSequential: return "sequential";
    case FrameworkVariant::kSemiIntegrated: return "semi-integrated";
  }
  return "unknown";
}

FrameworkVariant parse_variant(const std::string& tag) {
  if (tag == "integrated") return FrameworkVariant::kIntegrated;
  if (tag == "sequential") return FrameworkVariant::kSequential;
  if (tag == "semi-integrated" || tag == "semi") return FrameworkVariant::kSemiIntegrated;
  throw Error(ErrorCode::kConfig, "unknown variant '" + tag + "'");
}

ActionSet action_set_of(FrameworkVariant v) {
  return v == FrameworkVariant::kIntegrated ? ActionSet::kFull : ActionSet::kManeuverOnly;
}

void EpisodeLog::write_csv(std::ostream& out) const {
  out.precision(17);
  out << "t,phase,decision,action,maneuver,x,y,vx,vy,yaw,yaw_rate,ax,ax_ref,steer,y_ref,beta,"
         "reward,qp_status,fallback,qp_iterations,active_constraints\n";
  for (const auto& r : rows) {
    out << r.t << ',' << r.phase << ',' << r.decision << ',' << r.action << ',' << r.maneuver_id
        << ',' << r.x << ',' << r.y << ',' << r.vx << ',' << r.vy << ',' << r.yaw << ','
        << r.yaw_rate << ',' << r.ax << ',' << r.ax_ref << ',' << r.steer << ',' << r.y_ref << ','
        << r.beta << ',' << r.reward << ',' << r.qp_status << ',' << r.fallback << ','
        << r.qp_iterations << ',' << r.active_constraints << '\n';
  }
}

DrivingTask::DrivingTask(ExperimentConfig config, FrameworkVariant variant)
    : config_(std::move(config)),
      variant_(variant),
      catalog_(action_set_of(variant)),
      env_(config_.scenario),
      pi_(config_.pi, config_.limits.ax_min, config_.limits.ax_max) {
  config_.validate();
  periods_per_decision_ =
      static_cast<int>(std::lround(config_.scenario.decision_interval / config_.limits.period));
  steps_per_period_ =
      static_cast<int>(std::lround(config_.limits.period / config_.scenario.plant_dt));
  lane_y_ = config_.scenario.lane_center(env_.ego_lane());
}

int DrivingTask::state_dim() const { return 3 * (config_.scenario.observed_slots + 1); }

std::vector<double> DrivingTask::reset(std::uint64_t seed) {
  env_.reset(seed);
  pi_.reset();
  lane_y_ = config_.scenario.lane_center(env_.ego_lane());
  decision_ = 0;
  maneuver_count_ = 0;
  current_maneuver_ = -1;
  if (log_) {
    log_->rows.clear();
    log_->maneuvers.clear();
  }
  return env_.observe().values;
}

bool DrivingTask::finished() const {
  return env_.collided() || env_.off_road() || env_.time() >= config_.scenario.horizon - 1e-9;
}

MpcWeights DrivingTask::weights_for(const DiscreteAction& a) const {
  return config_.presets.combined(a.level);
}

std::optional<CandidatePath> DrivingTask::plan_lane_change(ManeuverRecord& rec) const {
  const auto first = preferred_direction(env_, config_.planner);
  if (!first) return std::nullopt;
  const auto& sc = config_.scenario;
  const VehicleState& ego = env_.ego();
  const double y0 = sc.lane_center(env_.ego_lane());

  if (variant_ == FrameworkVariant::kSequential) {
    const FeasibilityBounds b = lane_change_time_bounds(env_, *first, config_.planner);
    const double f = *first == Direction::kLeft ? sc.lane_width : -sc.lane_width;
    rec.tc_min = b.tc_min;
    rec.tc_max = b.tc_max;
    rec.gated = false;
    return make_candidate(ego.x, y0, f, ego.vx, config_.harness.sequential_duration,
                          config_.planner);
  }

  const Direction other = *first == Direction::kLeft ? Direction::kRight : Direction::kLeft;
  for (Direction d : {*first, other}) {
    const int target = env_.ego_lane() + (d == Direction::kLeft ? 1 : -1);
    if (target < 0 || target >= sc.lanes) continue;
    const FeasibilityBounds b = lane_change_time_bounds(env_, d, config_.planner);
    if (!b.feasible()) continue;
    const auto candidates = generate_candidates(env_, d, b, config_.planner);
    std::vector<FeatureVector> features;
    features.reserve(candidates.size());
    for (const auto& c : candidates) features.push_back(path_features(c, env_));
    rec.tc_min = b.tc_min;
    rec.tc_max = b.tc_max;
    return select_path(candidates, features, config_.irl_weights);
  }
  return std::nullopt;
}

void DrivingTask::run_period(double ax, double steer, const MpcOutcome& lon,
                             const MpcOutcome& lat, double ax_ref, double y_ref, Phase phase,
                             int action) {
  for (int s = 0; s < steps_per_period_; ++s) {
    env_.step({ax, steer}, config_.scenario.plant_dt);
    if (finished()) break;
  }
  if (!log_) return;
  const VehicleState& e = env_.ego();
  LogRow r;
  r.t = env_.time();
  r.phase = static_cast<int>(phase);
  r.decision = decision_;
  r.action = action;
  r.maneuver_id = phase == Phase::kChanging ? current_maneuver_ : -1;
  r.x = e.x;
  r.y = e.y;
  r.vx = e.vx;
  r.vy = e.vy;
  r.yaw = e.yaw;
  r.yaw_rate = e.yaw_rate;
  r.ax = ax;
  r.ax_ref = ax_ref;
  r.steer = steer;
  r.y_ref = y_ref;
  r.beta = e.vy / e.vx;
  r.reward = env_.compute_reward().total;
  r.qp_status = static_cast<int>(phase == Phase::kChanging ? lat.status : lon.status);
  r.fallback = (lon.fallback ? 1 : 0) | (lat.fallback ? 2 : 0);
  r.qp_iterations = lon.iterations + lat.iterations;
  r.active_constraints = lon.active_constraints + lat.active_constraints;
  log_->rows.push_back(r);
}

StepResult DrivingTask::step(int action) {
  const DiscreteAction a = catalog_.decode(action);
  const MpcWeights w = weights_for(a);
  const auto& lim = config_.limits;
  const auto& vehicle = config_.scenario.vehicle;
  StepResult res;
  std::vector<double> speeds;
  if (finished()) throw Error(ErrorCode::kParameter, "step called on a finished episode");

  auto close_interval = [&] {
    res.rewards.push_back(env_.compute_reward().total);
    speeds.push_back(env_.ego().vx);
  };

  auto keep_interval = [&](double a_ref) {
    for (int p = 0; p < periods_per_decision_ && !finished(); ++p) {
      std::optional<LeaderPrediction> leader;
      if (auto l = env_.ego_leader()) leader = LeaderPrediction{l->gap, l->speed};
      const MpcOutcome lon = lane_keeping_mpc(env_.ego().vx, a_ref, leader, w, lim);
      const MpcOutcome lat =
          lateral_mpc(env_.ego(), lane_reference(lane_y_, lim.horizon), w, lim, vehicle);
      run_period(lon.command, lat.command, lon, lat, a_ref, lane_y_, Phase::kKeeping, action);
    }
    close_interval();
  };

  std::optional<CandidatePath> path;
  ManeuverRecord rec;
  if (a.maneuver == Maneuver::kLaneChange) path = plan_lane_change(rec);

  if (!path) {
    keep_interval(reference_acceleration(a.maneuver));
  } else {
    current_maneuver_ = maneuver_count_++;
    rec.id = current_maneuver_;
    rec.start_time = env_.time();
    rec.duration = path->duration;
    rec.lateral = path->lateral;
    if (log_) log_->maneuvers.push_back(rec);

    env_.set_ego_intent(env_.config().nearest_lane(path->y0 + path->lateral));
    pi_.reset();
    const double v_target = env_.ego().vx;
    const int periods = static_cast<int>(std::ceil(path->duration / lim.period - 1e-9));
    int in_interval = 0;
    for (int p = 0; p < periods && !finished(); ++p) {
      const double elapsed = std::min(p * lim.period, path->duration);
      const MpcOutcome lat =
          lane_changing_mpc(env_.ego(), *path, elapsed, w, lim, vehicle);
      MpcOutcome lon;
      const double ax = pi_.update(env_.ego().vx, v_target, lim.period);
      const double t_end = std::min(elapsed + lim.period, path->duration);
      const double y_ref = path->y0 + reference_states(*path, t_end).y;
      run_period(ax, lat.command, lon, lat, 0.0, y_ref, Phase::kChanging, action);
      if (++in_interval == periods_per_decision_) {
        close_interval();
        in_interval = 0;
      }
    }
    if (in_interval > 0 || res.rewards.empty()) close_interval();
    lane_y_ = path->y0 + path->lateral;
    env_.set_ego_intent(-1);
    current_maneuver_ = -1;
  }
  ++decision_;

  res.next_state = env_.observe().values;
  res.collision = env_.collided();
  res.terminal = env_.collided() || env_.off_road();
  res.truncated = !res.terminal && env_.time() >= config_.scenario.horizon - 1e-9;
  double sum = 0.0;
  for (double v : speeds) sum += v;
  res.speed = speeds.empty() ? env_.ego().vx : sum / speeds.size();
  return res;
}

EpisodeResult run_episode(DrivingTask& task, const Policy& policy, std::uint64_t seed) {
  EpisodeResult out;
  out.seed = seed;
  double speed_sum = 0.0;
  std::size_t intervals = 0;
  try {
    std::vector<double> state = task.reset(seed);
    while (true) {
      StepResult r = task.step(policy(state));
      for (double x : r.rewards) out.reward += x;
      speed_sum += r.speed * r.rewards.size();
      intervals += r.rewards.size();
      ++out.decisions;
      state = std::move(r.next_state);
      if (r.terminal || r.truncated) break;
    }
  } catch (const Error& e) {
    out.valid = false;
    out.error = e.what();
  }
  out.collision = task.env().collided();
  out.off_road = task.env().off_road();
  out.lane_changes = task.lane_changes();
  out.mean_speed = intervals ? speed_sum / intervals : 0.0;
  return out;
}

MetricNormalizers normalizers_from(const ExperimentConfig& c) {
  MetricNormalizers n;
  n.ax_max = std::max(std::abs(c.limits.ax_max), std::abs(c.limits.ax_min));
  n.vx_max = c.limits.vx_max;
  n.y_max = c.scenario.lane_width;
  n.beta_max = sideslip_limit(c.scenario.vehicle, c.planner);
  n.steer_max = std::max(std::abs(c.limits.steer_max), std::abs(c.limits.steer_min));
  return n;
}

std::optional<LongitudinalMetrics> compute_longitudinal_metrics(const std::vector<LogRow>& rows,
                                                                const MetricNormalizers& n) {
  LongitudinalMetrics m;
  for (const auto& r : rows) {
    if (r.phase != static_cast<int>(Phase::kKeeping)) continue;
    m.e1 += std::abs(r.ax - r.ax_ref);
    m.e2 += std::abs(r.vx - n.vx_max);
    m.e3 += std::abs(r.ax);
    ++m.samples;
  }
  if (m.samples == 0) return std::nullopt;
  m.e1 /= m.samples * std::abs(n.ax_max);
  m.e2 /= m.samples * std::abs(n.vx_max);
  m.e3 /= m.samples * std::abs(n.ax_max);
  return m;
}

std::optional<LateralMetrics> compute_lateral_metrics(const std::vector<LogRow>& rows,
                                                      const MetricNormalizers& n) {
  LateralMetrics m;
  for (const auto& r : rows) {
    if (r.phase != static_cast<int>(Phase::kChanging)) continue;
    m.e1 += std::abs(r.y - r.y_ref);
    m.e2 += std::abs(r.beta);
    m.e3 += std::abs(r.steer);
    ++m.samples;
  }
  if (m.samples == 0) return std::nullopt;
  m.e1 /= m.samples * std::abs(n.y_max);
  m.e2 /= m.samples * std::abs(n.beta_max);
  m.e3 /= m.samples * std::abs(n.steer_max);
  return m;
}

CsvMetrics metrics_from_csv(std::istream& in, const MetricNormalizers& n) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIo, "episode CSV is empty");
  std::map<std::string, int> col;
  {
    std::stringstream ss(line);
    std::string name;
    int i = 0;
    while (std::getline(ss, name, ',')) col[name] = i++;
  }
  for (const char* need : {"phase", "ax", "ax_ref", "vx", "y", "y_ref", "beta", "steer"}) {
    if (!col.count(need)) throw Error(ErrorCode::kIo, std::string("episode CSV lacks ") + need);
  }
  double lon[3] = {0, 0, 0};
  double lat[3] = {0, 0, 0};
  long lon_n = 0;
  long lat_n = 0;
  std::vector<double> v;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    v.clear();
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::strtod(cell.c_str(), nullptr));
    auto at = [&](const char* k) { return v.at(col.at(k)); };
    if (at("phase") == 0.0) {
      lon[0] += std::abs(at("ax") - at("ax_ref"));
      lon[1] += std::abs(at("vx") - n.vx_max);
      lon[2] += std::abs(at("ax"));
      ++lon_n;
    } else {
      lat[0] += std::abs(at("y") - at("y_ref"));
      lat[1] += std::abs(at("beta"));
      lat[2] += std::abs(at("steer"));
      ++lat_n;
    }
  }
  CsvMetrics out;
  if (lon_n > 0) {
    out.longitudinal = LongitudinalMetrics{lon[0] / (lon_n * n.ax_max), lon[1] / (lon_n * n.vx_max),
                                           lon[2] / (lon_n * n.ax_max), static_cast<int>(lon_n)};
  }
  if (lat_n > 0) {
    out.lateral = LateralMetrics{lat[0] / (lat_n * n.y_max), lat[1] / (lat_n * n.beta_max),
                                 lat[2] / (lat_n * n.steer_max), static_cast<int>(lat_n)};
  }
  return out;
}

std::vector<std::uint64_t> evaluation_seeds(const ExperimentConfig& config, int count) {
  std::vector<std::uint64_t> seeds(count);
  for (int i = 0; i < count; ++i) seeds[i] = config.harness.eval_seed_base + i;
  return seeds;
}

VariantSummary evaluate_variant(const ExperimentConfig& config, FrameworkVariant variant,
                                const Policy& policy, const std::vector<std::uint64_t>& seeds,
                                std::vector<EpisodeLog>* logs) {
  VariantSummary s;
  s.variant = to_string(variant);
  const int n = static_cast<int>(seeds.size());
  s.episodes.resize(n);
  std::vector<EpisodeLog> local(n);
  int threads = config.harness.threads > 0 ? config.harness.threads
                                           : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, std::max(1, n));

  std::atomic<int> next{0};
  auto worker = [&] {
    DrivingTask task(config, variant);
    for (int i = next++; i < n; i = next++) {
      task.set_log(&local[i]);
      s.episodes[i] = run_episode(task, policy, seeds[i]);
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  const MetricNormalizers norm = normalizers_from(config);
  int valid = 0;
  LongitudinalMetrics lon_sum;
  LateralMetrics lat_sum;
  int lon_count = 0;
  int lat_count = 0;
  for (int i = 0; i < n; ++i) {
    const auto& e = s.episodes[i];
    if (!e.valid) continue;
    ++valid;
    s.mean_reward += e.reward;
    s.mean_speed += e.mean_speed;
    s.collision_rate += e.collision ? 1.0 : 0.0;
    if (auto m = compute_longitudinal_metrics(local[i].rows, norm)) {
      lon_sum.e1 += m->e1;
      lon_sum.e2 += m->e2;
      lon_sum.e3 += m->e3;
      lon_sum.samples += m->samples;
      ++lon_count;
    }
    if (auto m = compute_lateral_metrics(local[i].rows, norm)) {
      lat_sum.e1 += m->e1;
      lat_sum.e2 += m->e2;
      lat_sum.e3 += m->e3;
      lat_sum.samples += m->samples;
      ++lat_count;
    }
  }
  if (valid > 0) {
    s.mean_reward /= valid;
    s.mean_speed /= valid;
    s.collision_rate /= valid;
  }
  if (lon_count > 0) {
    s.longitudinal = LongitudinalMetrics{lon_sum.e1 / lon_count, lon_sum.e2 / lon_count,
                                         lon_sum.e3 / lon_count, lon_sum.samples};
  }
  if (lat_count > 0) {
    s.lateral = LateralMetrics{lat_sum.e1 / lat_count, lat_sum.e2 / lat_count,
                               lat_sum.e3 / lat_count, lat_sum.samples};
  }
  if (logs) *logs = std::move(local);
  return s;
}

PairedDelta paired_delta(const VariantSummary& a, const VariantSummary& b) {
  PairedDelta d;
  d.a = a.variant;
  d.b = b.variant;
  auto pct = [](double x, double y) { return y != 0.0 ? (x - y) / std::abs(y) * 100.0 : 0.0; };
  d.speed_pct = pct(a.mean_speed, b.mean_speed);
  d.reward_pct = pct(a.mean_reward, b.mean_reward);
  d.collision_delta = a.collision_rate - b.collision_rate;
  const std::size_t n = std::min(a.episodes.size(), b.episodes.size());
  std::vector<double> diff;
  for (std::size_t i = 0; i < n; ++i) {
    if (a.episodes[i].valid && b.episodes[i].valid) {
      diff.push_back(a.episodes[i].reward - b.episodes[i].reward);
    }
  }
  if (!diff.empty()) {
    double mean = 0.0;
    for (double x : diff) mean += x;
    mean /= diff.size();
    double var = 0.0;
    for (double x : diff) var += (x - mean) * (x - mean);
    var = diff.size() > 1 ? var / (diff.size() - 1) : 0.0;
    d.reward_diff_mean = mean;
    d.reward_diff_se = std::sqrt(var / diff.size());
    d.reward_t = d.reward_diff_se > 0.0 ? mean / d.reward_diff_se : 0.0;
  }
  return d;
}

Policy agent_policy(const BootstrappedDqn& agent) {
  return [&agent](const std::vector<double>& s) { return agent.select_action_voting(s); };
}

BootstrappedDqn make_agent(const ExperimentConfig& config, FrameworkVariant variant,
                           const AgentConfig& agent) {
  const ActionCatalog catalog(action_set_of(variant));
  return BootstrappedDqn(agent, 3 * (config.scenario.observed_slots + 1), catalog.size());
}

void write_phase_plane_csv(std::ostream& out, const std::vector<EpisodeLog>& logs,
                           const std::vector<std::uint64_t>& seeds) {
  out.precision(17);
  out << "seed,t,phase,maneuver,beta,yaw_rate\n";
  for (std::size_t i = 0; i < logs.size(); ++i) {
    for (const auto& r : logs[i].rows) {
      out << (i < seeds.size() ? seeds[i] : i) << ',' << r.t << ',' << r.phase << ','
          << r.maneuver_id << ',' << r.beta << ',' << r.yaw_rate << '\n';
    }
  }
}

void write_summary_json(const std::string& path, const std::vector<VariantSummary>& summaries,
                        const std::vector<PairedDelta>& deltas) {
  using nlohmann::json;
  json j;
  j["variants"] = json::array();
  for (const auto& s : summaries) {
    json v = {{"variant", s.variant},
              {"mean_reward", s.mean_reward},
              {"mean_speed", s.mean_speed},
              {"collision_rate", s.collision_rate},
              {"episodes", s.episodes.size()}};
    if (s.longitudinal) {
      v["E1"] = s.longitudinal->e1;
      v["E2"] = s.longitudinal->e2;
      v["E3"] = s.longitudinal->e3;
    }
    if (s.lateral) {
      v["E1_bar"] = s.lateral->e1;
      v["E2_bar"] = s.lateral->e2;
      v["E3_bar"] = s.lateral->e3;
    }
    json eps = json::array();
    for (const auto& e : s.episodes) {
      eps.push_back({{"seed", e.seed}, {"reward", e.reward}, {"mean_speed", e.mean_speed},
                     {"collision", e.collision}, {"lane_changes", e.lane_changes},
                     {"valid", e.valid}});
    }
    v["per_seed"] = eps;
    j["variants"].push_back(v);
  }
  j["deltas"] = json::array();
  for (const auto& d : deltas) {
    j["deltas"].push_back({{"a", d.a}, {"b", d.b}, {"speed_pct", d.speed_pct},
                           {"reward_pct", d.reward_pct}, {"collision_delta", d.collision_delta},
                           {"reward_diff_mean", d.reward_diff_mean},
                           {"reward_diff_se", d.reward_diff_se}, {"reward_t", d.reward_t}});
  }
  j["reference_only"] = {
      {"note", "published values from a different simulator; not asserted"},
      {"integrated_vs_sequential_speed_pct", 2.12},
      {"integrated_vs_sequential_reward_pct", 10.25},
      {"bootstrapped_vs_dqn_collision_reduction_pct", 62.31},
      {"bootstrapped_vs_double_dqn_collision_reduction_pct", 43.59}};
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << j.dump(2) << '\n';
}

}  // namespace cruise
