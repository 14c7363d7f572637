#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cruise/path_planner.hpp"

namespace cruise {

/// One expert lane change: the chosen candidate plus the full candidate set
/// generated from the same initial state.
struct ExpertRecord {
  std::uint64_t seed = 0;
  int scenario = 0;
  double speed = 0.0;
  int chosen = 0;
  double chosen_duration = 0.0;
  FeatureVector expert = FeatureVector::Zero();
  std::vector<double> durations;
  std::vector<FeatureVector> candidates;
};

struct IrlDataset {
  std::vector<ExpertRecord> train;
  std::vector<ExpertRecord> eval;
  std::vector<std::string> log;  // skipped scenarios
};

/// kGradient: w += rho * grad. kNatural: w += rho * F^-1 grad with F the
/// Fisher information of the candidate softmax (the negative Hessian of Omega).
enum class IrlUpdate { kGradient, kNatural };

struct IrlConfig {
  double learning_rate = 0.08;
  int episodes = 150;
  WeightVector initial = WeightVector::Constant(-1.0);
  double divergence_limit = 1e6;
  IrlUpdate update = IrlUpdate::kNatural;
  double ridge = 1e-6;  // relative to trace(F), keeps F invertible
};

struct IrlResult {
  WeightVector weights = WeightVector::Zero();
  std::vector<double> objective;  // Omega before each update, then the final value
};

/// Softmax of w^T H over the candidate set.
std::vector<double> candidate_probabilities(std::span<const FeatureVector> features,
                                            const WeightVector& weights);

double irl_objective(std::span<const ExpertRecord> data, const WeightVector& weights);
WeightVector irl_gradient(std::span<const ExpertRecord> data, const WeightVector& weights);

/// Summed feature covariance under the model, sum_q Cov_p[H].
Eigen::Matrix4d irl_fisher(std::span<const ExpertRecord> data, const WeightVector& weights);

/// Fixed-step ascent on the log-likelihood.
IrlResult train_irl(std::span<const ExpertRecord> data, const IrlConfig& config);

struct SynthExpertConfig {
  WeightVector true_weights = WeightVector::Zero();
  int train_count = 50;
  int eval_count = 10;
  double choice_noise = 0.0;  // softmax temperature; 0 picks the argmax
  std::uint64_t seed = 1;
  int max_attempts = 2000;
};

/// Builds a dataset from seeded scenarios; infeasible scenarios are skipped.
IrlDataset synth_expert(const ScenarioConfig& scenario, const PlannerConfig& planner,
                        const SynthExpertConfig& config);

/// Expert record for the current state of `env`, or nullopt when no lane
/// change is feasible.
std::optional<ExpertRecord> expert_record(const TrafficEnv& env, const PlannerConfig& planner,
                                          const WeightVector& weights);

/// Share of records whose top-ranked candidate under `weights` is the expert's.
double choice_agreement(std::span<const ExpertRecord> data, const WeightVector& weights);

/// Mean relative error per feature between the learned choice and the expert.
FeatureVector feature_relative_errors(std::span<const ExpertRecord> data,
                                      const WeightVector& weights);

void write_dataset_csv(std::ostream& out, const IrlDataset& data);
IrlDataset read_dataset_csv(std::istream& in);

void save_weights_json(const std::string& path, const WeightVector& weights);
WeightVector load_weights_json(const std::string& path);

}  // namespace cruise
