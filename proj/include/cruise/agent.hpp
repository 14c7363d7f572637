#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cruise/motion_control.hpp"
#include "cruise/neural.hpp"

namespace cruise {

enum class Maneuver { kAccelerate = 0, kHold = 1, kDecelerate = 2, kLaneChange = 3 };

struct DiscreteAction {
  Maneuver maneuver = Maneuver::kHold;
  int level = 2;  // weight preset 1..3

  bool operator==(const DiscreteAction&) const = default;
};

/// Reference acceleration of a keeping maneuver (+2, 0, -2 m/s^2); 0 for a
/// lane change.
double reference_acceleration(Maneuver m);

/// kFull: maneuver x preset level (12 actions, index = 3 * maneuver + level - 1).
/// kManeuverOnly: one action per maneuver with a fixed preset level.
enum class ActionSet { kFull, kManeuverOnly };

class ActionCatalog {
 public:
  explicit ActionCatalog(ActionSet set = ActionSet::kFull, int fixed_level = 2);

  int size() const { return set_ == ActionSet::kFull ? 12 : 4; }
  ActionSet set() const { return set_; }
  DiscreteAction decode(int index) const;
  int encode(const DiscreteAction& action) const;

 private:
  ActionSet set_;
  int fixed_level_;
};

struct Transition {
  std::vector<double> state;
  int action = 0;
  double reward = 0.0;      // discounted sum over the executed steps
  std::vector<double> next_state;
  bool terminal = false;
  double discount = 0.95;   // gamma^m for an m-step action
  std::vector<char> mask;
};

/// Ring buffer with uniform sampling with replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  std::vector<std::size_t> sample_indices(std::size_t batch, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
};

struct AgentConfig {
  int heads = 6;
  double gamma = 0.95;
  double learning_rate = 1e-4;
  int target_period = 500;  // gradient steps between target syncs
  int batch = 64;
  std::size_t capacity = 15000;
  double mask_probability = 0.5;
  int episodes = 2000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_fraction = 0.3;
  bool double_dqn = false;
  int train_every = 1;  // decisions between gradient steps
  std::vector<int> shared_layers{128, 64};
  std::vector<int> head_layers{64};
  std::uint64_t seed = 1;

  void validate() const;
  /// Linear decay over the first `epsilon_fraction` of the episodes.
  double epsilon(int episode) const;
};

/// Shared-core K-head Q-network trained with per-head bootstrap masks.
class BootstrappedDqn {
 public:
  BootstrappedDqn(AgentConfig config, int state_dim, int action_count);

  const AgentConfig& config() const { return config_; }
  int state_dim() const { return state_dim_; }
  int action_count() const { return action_count_; }
  QNetwork& online() { return online_; }
  const QNetwork& online() const { return online_; }
  const QNetwork& target() const { return target_; }
  long gradient_steps() const { return gradient_steps_; }
  Adam& optimizer() { return adam_; }

  std::vector<Eigen::VectorXd> q_values(const std::vector<double>& state) const;

  /// Epsilon-greedy on head k; ties go to the lowest index.
  int select_action_training(const std::vector<double>& state, int head, double epsilon,
                             std::mt19937_64& rng) const;
  /// Plurality vote over heads; ties by summed Q, then lowest index.
  int select_action_voting(const std::vector<double>& state) const;

  /// Per-head targets (heads x batch).
  Eigen::MatrixXd td_targets(const std::vector<const Transition*>& batch) const;

  /// One masked gradient step on a uniformly sampled batch; returns the
  /// masked mean squared TD error.
  double train_step(const ReplayBuffer& buffer, std::mt19937_64& rng);
  double train_on(const std::vector<const Transition*>& batch);

  void sync_target() { target_.params() = online_.params(); }
  void load_online(const QNetwork& net);

 private:
  AgentConfig config_;
  int state_dim_;
  int action_count_;
  QNetwork online_;
  QNetwork target_;
  Adam adam_;
  long gradient_steps_ = 0;
};

int greedy_action(const Eigen::VectorXd& q);
int vote(const std::vector<Eigen::VectorXd>& q);

struct StepResult {
  std::vector<double> next_state;
  std::vector<double> rewards;  // one per elementary decision interval
  bool terminal = false;        // absorbing: no bootstrap
  bool truncated = false;       // time limit: bootstrap, end episode
  bool collision = false;
  double speed = 0.0;           // mean ego speed over the step
};

/// Decision-level environment. A temporally extended action reports one
/// reward per elementary interval and is credited with their discounted sum.
class DecisionEnvironment {
 public:
  virtual ~DecisionEnvironment() = default;
  virtual int state_dim() const = 0;
  virtual int action_count() const = 0;
  virtual std::vector<double> reset(std::uint64_t seed) = 0;
  virtual StepResult step(int action) = 0;
};

struct EpisodeStats {
  int episode = 0;
  double reward = 0.0;
  bool collision = false;
  double mean_speed = 0.0;
  int head = 0;
  int decisions = 0;
  double loss = 0.0;
  bool aborted = false;
  std::string error;
};

struct TrainingCurves {
  std::vector<EpisodeStats> episodes;
  double final_collision_rate(int window) const;
  double mean_reward(int first, int last) const;
  void write_csv(std::ostream& out) const;
};

using EpisodeCallback = std::function<void(const EpisodeStats&)>;

/// Seed of training episode `e` for a run seeded with `seed`.
std::uint64_t episode_seed(std::uint64_t seed, int e);

TrainingCurves run_training(BootstrappedDqn& agent, DecisionEnvironment& env,
                            const EpisodeCallback& on_episode = {});

/// Discounted sum and the matching gamma^m.
std::pair<double, double> accumulate_rewards(const std::vector<double>& rewards, double gamma);

}  // namespace cruise
