#include "cruise/irl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "json.hpp"

#include "cruise/error.hpp"

namespace cruise {

namespace {

double log_sum_exp(std::span<const FeatureVector> features, const WeightVector& w) {
  double peak = -std::numeric_limits<double>::infinity();
  for (const auto& h : features) peak = std::max(peak, w.dot(h));
  double sum = 0.0;
  for (const auto& h : features) sum += std::exp(w.dot(h) - peak);
  return peak + std::log(sum);
}

std::vector<CandidatePath> feasible_candidates(const TrafficEnv& env,
                                               const PlannerConfig& planner) {
  const auto first = preferred_direction(env, planner);
  if (!first) return {};
  const Direction other = *first == Direction::kLeft ? Direction::kRight : Direction::kLeft;
  for (Direction d : {*first, other}) {
    const int target = env.ego_lane() + (d == Direction::kLeft ? 1 : -1);
    if (target < 0 || target >= env.config().lanes) continue;
    const FeasibilityBounds b = lane_change_time_bounds(env, d, planner);
    if (b.feasible()) return generate_candidates(env, d, b, planner);
  }
  return {};
}

}  // namespace

std::vector<double> candidate_probabilities(std::span<const FeatureVector> features,
                                            const WeightVector& weights) {
  if (features.empty()) {
    throw Error(ErrorCode::kParameter, "candidate set is empty");
  }
  const double lse = log_sum_exp(features, weights);
  std::vector<double> p(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    p[i] = std::exp(weights.dot(features[i]) - lse);
  }
  return p;
}

double irl_objective(std::span<const ExpertRecord> data, const WeightVector& weights) {
  if (data.empty()) throw Error(ErrorCode::kParameter, "IRL dataset is empty");
  double omega = 0.0;
  for (const auto& r : data) {
    omega += weights.dot(r.expert) - log_sum_exp(r.candidates, weights);
  }
  return omega;
}

WeightVector irl_gradient(std::span<const ExpertRecord> data, const WeightVector& weights) {
  if (data.empty()) throw Error(ErrorCode::kParameter, "IRL dataset is empty");
  WeightVector g = WeightVector::Zero();
  for (const auto& r : data) {
    const auto p = candidate_probabilities(r.candidates, weights);
    WeightVector expected = WeightVector::Zero();
    for (std::size_t i = 0; i < p.size(); ++i) expected += p[i] * r.candidates[i];
    g += r.expert - expected;
  }
  return g;
}

Eigen::Matrix4d irl_fisher(std::span<const ExpertRecord> data, const WeightVector& weights) {
  Eigen::Matrix4d f = Eigen::Matrix4d::Zero();
  for (const auto& r : data) {
    const auto p = candidate_probabilities(r.candidates, weights);
    FeatureVector mean = FeatureVector::Zero();
    for (std::size_t i = 0; i < p.size(); ++i) mean += p[i] * r.candidates[i];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const FeatureVector c = r.candidates[i] - mean;
      f += p[i] * c * c.transpose();
    }
  }
  return f;
}

IrlResult train_irl(std::span<const ExpertRecord> data, const IrlConfig& config) {
  if (!(config.learning_rate > 0.0) || config.episodes < 0) {
    throw Error(ErrorCode::kConfig, "IRL needs a positive learning rate and episodes >= 0");
  }
  IrlResult result;
  result.weights = config.initial;
  if (config.episodes == 0) return result;
  result.objective.reserve(config.episodes + 1);
  for (int e = 0; e < config.episodes; ++e) {
    result.objective.push_back(irl_objective(data, result.weights));
    const WeightVector g = irl_gradient(data, result.weights);
    if (config.update == IrlUpdate::kNatural) {
      Eigen::Matrix4d f = irl_fisher(data, result.weights);
      f.diagonal().array() += config.ridge * std::max(f.trace(), 1e-300);
      result.weights += config.learning_rate * f.ldlt().solve(g);
    } else {
      result.weights += config.learning_rate * g;
    }
    if (!result.weights.allFinite() ||
        result.weights.cwiseAbs().maxCoeff() > config.divergence_limit) {
      throw Error(ErrorCode::kStepSize, "IRL weights diverged at episode " + std::to_string(e));
    }
  }
  result.objective.push_back(irl_objective(data, result.weights));
  return result;
}

std::optional<ExpertRecord> expert_record(const TrafficEnv& env, const PlannerConfig& planner,
                                          const WeightVector& weights) {
  const auto candidates = feasible_candidates(env, planner);
  if (candidates.empty()) return std::nullopt;
  ExpertRecord r;
  r.speed = env.ego().vx;
  for (const auto& c : candidates) {
    r.durations.push_back(c.duration);
    r.candidates.push_back(path_features(c, env));
  }
  r.chosen = static_cast<int>(select_path_index(r.candidates, candidates, weights));
  r.chosen_duration = r.durations[r.chosen];
  r.expert = r.candidates[r.chosen];
  return r;
}

IrlDataset synth_expert(const ScenarioConfig& scenario, const PlannerConfig& planner,
                        const SynthExpertConfig& config) {
  if (config.train_count < 0 || config.eval_count < 0 || config.choice_noise < 0.0) {
    throw Error(ErrorCode::kConfig, "invalid synthetic expert configuration");
  }
  TrafficEnv env(scenario);
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  IrlDataset data;
  const int wanted = config.train_count + config.eval_count;
  int produced = 0;
  for (int attempt = 0; attempt < config.max_attempts && produced < wanted; ++attempt) {
    const std::uint64_t seed = config.seed + static_cast<std::uint64_t>(attempt);
    env.reset(seed);
    auto record = expert_record(env, planner, config.true_weights);
    if (!record) {
      data.log.push_back("seed " + std::to_string(seed) + ": no feasible lane change");
      continue;
    }
    if (config.choice_noise > 0.0) {
      const auto p = candidate_probabilities(record->candidates,
                                             config.true_weights / config.choice_noise);
      std::discrete_distribution<int> pick(p.begin(), p.end());
      record->chosen = pick(rng);
      record->chosen_duration = record->durations[record->chosen];
      record->expert = record->candidates[record->chosen];
    }
    record->seed = seed;
    record->scenario = produced;
    (produced < config.train_count ? data.train : data.eval).push_back(std::move(*record));
    ++produced;
  }
  if (produced < wanted) {
    throw Error(ErrorCode::kConfig, "could not find enough feasible expert scenarios");
  }
  return data;
}

double choice_agreement(std::span<const ExpertRecord> data, const WeightVector& weights) {
  if (data.empty()) return 0.0;
  int hits = 0;
  for (const auto& r : data) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < r.candidates.size(); ++i) {
      if (weights.dot(r.candidates[i]) > weights.dot(r.candidates[best])) best = i;
    }
    if (static_cast<int>(best) == r.chosen) ++hits;
  }
  return static_cast<double>(hits) / data.size();
}

FeatureVector feature_relative_errors(std::span<const ExpertRecord> data,
                                      const WeightVector& weights) {
  FeatureVector err = FeatureVector::Zero();
  if (data.empty()) return err;
  for (const auto& r : data) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < r.candidates.size(); ++i) {
      if (weights.dot(r.candidates[i]) > weights.dot(r.candidates[best])) best = i;
    }
    for (int k = 0; k < 4; ++k) {
      const double ref = std::abs(r.expert[k]);
      const double diff = std::abs(r.candidates[best][k] - r.expert[k]);
      err[k] += ref > 0.0 ? diff / ref : 0.0;
    }
  }
  return err / static_cast<double>(data.size());
}

void write_dataset_csv(std::ostream& out, const IrlDataset& data) {
  out.precision(17);
  out << "kind,split,scenario,seed_or_index,speed_or_tc,chosen,chosen_tc,h_sta,h_col,h_com,h_tra\n";
  auto dump = [&](const char* split, const std::vector<ExpertRecord>& records) {
    for (const auto& r : records) {
      out << "E," << split << ',' << r.scenario << ',' << r.seed << ',' << r.speed << ','
          << r.chosen << ',' << r.chosen_duration;
      for (int k = 0; k < 4; ++k) out << ',' << r.expert[k];
      out << '\n';
      for (std::size_t i = 0; i < r.candidates.size(); ++i) {
        out << "C," << split << ',' << r.scenario << ',' << i << ',' << r.durations[i] << ",,";
        for (int k = 0; k < 4; ++k) out << ',' << r.candidates[i][k];
        out << '\n';
      }
    }
  };
  dump("train", data.train);
  dump("eval", data.eval);
}

namespace {

// strtod keeps subnormal values that std::stod rejects as out of range.
double parse_double(const std::string& cell, int line_no) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str()) {
    throw Error(ErrorCode::kIo, "bad number at line " + std::to_string(line_no));
  }
  return v;
}

}  // namespace

IrlDataset read_dataset_csv(std::istream& in) {
  IrlDataset data;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kIo, "dataset file is empty");
  ExpertRecord* current = nullptr;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 11) {
      throw Error(ErrorCode::kIo, "malformed dataset row at line " + std::to_string(line_no));
    }
    FeatureVector h;
    for (int k = 0; k < 4; ++k) h[k] = parse_double(f[7 + k], line_no);
    auto& bucket = f[1] == "eval" ? data.eval : data.train;
    if (f[0] == "E") {
      ExpertRecord r;
      r.scenario = std::stoi(f[2]);
      r.seed = std::stoull(f[3]);
      r.speed = parse_double(f[4], line_no);
      r.chosen = std::stoi(f[5]);
      r.chosen_duration = parse_double(f[6], line_no);
      r.expert = h;
      bucket.push_back(std::move(r));
      current = &bucket.back();
    } else if (f[0] == "C") {
      if (!current || current->scenario != std::stoi(f[2])) {
        throw Error(ErrorCode::kIo, "candidate row without expert at line " +
                                        std::to_string(line_no));
      }
      current->durations.push_back(parse_double(f[4], line_no));
      current->candidates.push_back(h);
    } else {
      throw Error(ErrorCode::kIo, "unknown row kind at line " + std::to_string(line_no));
    }
  }
  for (auto* set : {&data.train, &data.eval}) {
    for (const auto& r : *set) {
      if (r.candidates.empty() || r.chosen < 0 ||
          r.chosen >= static_cast<int>(r.candidates.size())) {
        throw Error(ErrorCode::kIo, "expert record has an invalid candidate set");
      }
    }
  }
  return data;
}

void save_weights_json(const std::string& path, const WeightVector& weights) {
  nlohmann::json j;
  j["weights"] = {weights[0], weights[1], weights[2], weights[3]};
  j["features"] = {"stability", "collision_risk", "comfort", "travel"};
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  out << j.dump(2) << '\n';
}

WeightVector load_weights_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kMissingArtifact, "cannot open weights file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIo, std::string("bad weights file: ") + e.what());
  }
  const auto& w = j.at("weights");
  if (!w.is_array() || w.size() != 4) throw Error(ErrorCode::kIo, "weights must have 4 entries");
  WeightVector out;
  for (int k = 0; k < 4; ++k) out[k] = w[k].get<double>();
  return out;
}

}  // namespace cruise
