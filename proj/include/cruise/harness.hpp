#pragma once

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cruise/config.hpp"

namespace cruise {

enum class FrameworkVariant { kIntegrated, kSequential, kSemiIntegrated };

std::string to_string(FrameworkVariant v);
FrameworkVariant parse_variant(const std::string& tag);
ActionSet action_set_of(FrameworkVariant v);

enum class Phase { kKeeping = 0, kChanging = 1 };

/// One row per control period.
struct LogRow {
  double t = 0.0;
  int phase = 0;
  int decision = 0;
  int action = -1;
  int maneuver_id = -1;  // lane-change counter, -1 while keeping
  double x = 0.0;
  double y = 0.0;
  double vx = 0.0;
  double vy = 0.0;
  double yaw = 0.0;
  double yaw_rate = 0.0;
  double ax = 0.0;
  double ax_ref = 0.0;
  double steer = 0.0;
  double y_ref = 0.0;
  double beta = 0.0;
  double reward = 0.0;  // reward at the end of the period
  int qp_status = 0;
  int fallback = 0;
  int qp_iterations = 0;
  int active_constraints = 0;
};

struct ManeuverRecord {
  int id = 0;
  double start_time = 0.0;
  double duration = 0.0;
  double tc_min = 0.0;
  double tc_max = 0.0;
  double lateral = 0.0;
  bool gated = true;  // false when the variant skips the feasibility check
};

struct EpisodeLog {
  std::vector<LogRow> rows;
  std::vector<ManeuverRecord> maneuvers;
  void write_csv(std::ostream& out) const;
};

/// Closed loop at plant step, control period and decision interval, exposed
/// as a decision-level environment.
class DrivingTask : public DecisionEnvironment {
 public:
  DrivingTask(ExperimentConfig config, FrameworkVariant variant);

  int state_dim() const override;
  int action_count() const override { return catalog_.size(); }
  std::vector<double> reset(std::uint64_t seed) override;
  StepResult step(int action) override;

  void set_log(EpisodeLog* log) { log_ = log; }
  const TrafficEnv& env() const { return env_; }
  TrafficEnv& env() { return env_; }
  const ActionCatalog& catalog() const { return catalog_; }
  FrameworkVariant variant() const { return variant_; }
  double elapsed() const { return env_.time(); }
  int lane_changes() const { return maneuver_count_; }

 private:
  struct PeriodResult {
    bool done = false;
  };

  MpcWeights weights_for(const DiscreteAction& a) const;
  std::optional<CandidatePath> plan_lane_change(ManeuverRecord& record) const;
  void run_period(double ax, double steer, const MpcOutcome& lon, const MpcOutcome& lat,
                  double ax_ref, double y_ref, Phase phase, int action);
  bool finished() const;

  ExperimentConfig config_;
  FrameworkVariant variant_;
  ActionCatalog catalog_;
  TrafficEnv env_;
  PiSpeedHold pi_;
  EpisodeLog* log_ = nullptr;
  double lane_y_ = 0.0;
  int decision_ = 0;
  int maneuver_count_ = 0;
  int periods_per_decision_ = 2;
  int steps_per_period_ = 5;
  std::vector<double> period_rewards_;
  std::vector<double> period_speeds_;
  int current_maneuver_ = -1;
};

using Policy = std::function<int(const std::vector<double>& state)>;

struct EpisodeResult {
  std::uint64_t seed = 0;
  double reward = 0.0;
  bool collision = false;
  bool off_road = false;
  double mean_speed = 0.0;
  int decisions = 0;
  int lane_changes = 0;
  bool valid = true;
  std::string error;
};

EpisodeResult run_episode(DrivingTask& task, const Policy& policy, std::uint64_t seed);

struct LongitudinalMetrics {
  double e1 = 0.0;
  double e2 = 0.0;
  double e3 = 0.0;
  int samples = 0;
};

struct LateralMetrics {
  double e1 = 0.0;
  double e2 = 0.0;
  double e3 = 0.0;
  int samples = 0;
};

struct MetricNormalizers {
  double ax_max = 4.0;
  double vx_max = 33.33;
  double y_max = 3.75;
  double beta_max = 0.16524;
  double steer_max = 0.1;
};

MetricNormalizers normalizers_from(const ExperimentConfig& config);

/// Keeping rows only; nullopt when there are none.
std::optional<LongitudinalMetrics> compute_longitudinal_metrics(const std::vector<LogRow>& rows,
                                                                const MetricNormalizers& n);
/// Changing rows only; nullopt when there are none.
std::optional<LateralMetrics> compute_lateral_metrics(const std::vector<LogRow>& rows,
                                                      const MetricNormalizers& n);

struct CsvMetrics {
  std::optional<LongitudinalMetrics> longitudinal;
  std::optional<LateralMetrics> lateral;
};

/// Recomputes both metric groups from an episode CSV by column name.
CsvMetrics metrics_from_csv(std::istream& in, const MetricNormalizers& n);

struct VariantSummary {
  std::string variant;
  std::vector<EpisodeResult> episodes;
  double mean_reward = 0.0;
  double mean_speed = 0.0;
  double collision_rate = 0.0;
  std::optional<LongitudinalMetrics> longitudinal;  // averaged over episodes
  std::optional<LateralMetrics> lateral;
};

/// Evaluates `seeds` with one task per worker; results keep the seed order.
VariantSummary evaluate_variant(const ExperimentConfig& config, FrameworkVariant variant,
                                const Policy& policy, const std::vector<std::uint64_t>& seeds,
                                std::vector<EpisodeLog>* logs = nullptr);

struct PairedDelta {
  std::string a;
  std::string b;
  double speed_pct = 0.0;      // (a - b) / |b| * 100
  double reward_pct = 0.0;
  double collision_delta = 0.0;  // rate difference a - b
  double reward_diff_mean = 0.0;
  double reward_diff_se = 0.0;
  double reward_t = 0.0;       // paired t statistic
};

PairedDelta paired_delta(const VariantSummary& a, const VariantSummary& b);

std::vector<std::uint64_t> evaluation_seeds(const ExperimentConfig& config, int count);

/// Voting policy of a trained agent.
Policy agent_policy(const BootstrappedDqn& agent);

/// Agent sized for `variant` on the configured scenario.
BootstrappedDqn make_agent(const ExperimentConfig& config, FrameworkVariant variant,
                           const AgentConfig& agent);

void write_phase_plane_csv(std::ostream& out, const std::vector<EpisodeLog>& logs,
                           const std::vector<std::uint64_t>& seeds);

void write_summary_json(const std::string& path, const std::vector<VariantSummary>& summaries,
                        const std::vector<PairedDelta>& deltas);

}  // namespace cruise
