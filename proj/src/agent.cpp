#include "cruise/agent.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "cruise/error.hpp"

namespace cruise {

double reference_acceleration(Maneuver m) {
  switch (m) {
    case Maneuver::kAccelerate: return 2.0;
    case Maneuver::kDecelerate: return -2.0;
    default: return 0.0;
  }
}

ActionCatalog::ActionCatalog(ActionSet set, int fixed_level)
    : set_(set), fixed_level_(fixed_level) {
  if (fixed_level < 1 || fixed_level > 3) {
    throw Error(ErrorCode::kConfig, "fixed preset level must be 1, 2 or 3");
  }
}

DiscreteAction ActionCatalog::decode(int index) const {
  if (index < 0 || index >= size()) {
    throw Error(ErrorCode::kRange, "action index " + std::to_string(index) + " out of range");
  }
  if (set_ == ActionSet::kManeuverOnly) return {static_cast<Maneuver>(index), fixed_level_};
  return {static_cast<Maneuver>(index / 3), index % 3 + 1};
}

int ActionCatalog::encode(const DiscreteAction& a) const {
  const int m = static_cast<int>(a.maneuver);
  if (m < 0 || m > 3 || a.level < 1 || a.level > 3) {
    throw Error(ErrorCode::kRange, "invalid action");
  }
  if (set_ == ActionSet::kManeuverOnly) return m;
  return 3 * m + a.level - 1;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw Error(ErrorCode::kConfig, "replay capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch,
                                                      std::mt19937_64& rng) const {
  if (items_.empty()) throw Error(ErrorCode::kParameter, "cannot sample an empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<std::size_t> out(batch);
  for (auto& i : out) i = pick(rng);
  return out;
}

void AgentConfig::validate() const {
  auto fail = [](const char* what) { throw Error(ErrorCode::kConfig, what); };
  if (heads < 1) fail("head count must be at least 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) fail("discount must lie in [0, 1)");
  if (!(learning_rate >= 0.0)) fail("learning rate must be non-negative");
  if (target_period < 1) fail("target period must be at least 1");
  if (batch < 1 || capacity < static_cast<std::size_t>(batch)) fail("invalid batch or capacity");
  if (!(mask_probability > 0.0 && mask_probability <= 1.0)) fail("mask probability in (0, 1]");
  if (episodes < 0) fail("episode count must be non-negative");
  if (train_every < 1) fail("train_every must be at least 1");
  if (!(epsilon_fraction > 0.0)) fail("epsilon fraction must be positive");
}

double AgentConfig::epsilon(int episode) const {
  const double span = std::max(1.0, epsilon_fraction * episodes);
  const double frac = std::min(1.0, episode / span);
  return epsilon_start + (epsilon_end - epsilon_start) * frac;
}

int greedy_action(const Eigen::VectorXd& q) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < q.size(); ++i) {
    if (q(i) > q(best)) best = i;
  }
  return static_cast<int>(best);
}

int vote(const std::vector<Eigen::VectorXd>& q) {
  if (q.empty()) throw Error(ErrorCode::kParameter, "no heads to vote");
  const auto n = q.front().size();
  std::vector<int> votes(n, 0);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
  for (const auto& head : q) {
    ++votes[greedy_action(head)];
    total += head;
  }
  int best = 0;
  for (int a = 1; a < n; ++a) {
    if (votes[a] > votes[best] || (votes[a] == votes[best] && total(a) > total(best))) best = a;
  }
  return best;
}

std::pair<double, double> accumulate_rewards(const std::vector<double>& rewards, double gamma) {
  double sum = 0.0;
  double factor = 1.0;
  for (double r : rewards) {
    sum += factor * r;
    factor *= gamma;
  }
  return {sum, factor};
}

BootstrappedDqn::BootstrappedDqn(AgentConfig config, int state_dim, int action_count)
    : config_(std::move(config)),
      state_dim_(state_dim),
      action_count_(action_count),
      online_(MlpTopology{state_dim, config_.shared_layers, config_.head_layers, config_.heads,
                          action_count}),
      target_(online_.topology()),
      adam_(AdamConfig{config_.learning_rate}, online_.blocks(), online_.param_count()) {
  config_.validate();
  online_.initialize(config_.seed);
  sync_target();
}

void BootstrappedDqn::load_online(const QNetwork& net) {
  if (!(net.topology() == online_.topology())) {
    throw Error(ErrorCode::kShapeMismatch, "checkpoint topology does not match the agent");
  }
  online_.params() = net.params();
  sync_target();
}

std::vector<Eigen::VectorXd> BootstrappedDqn::q_values(const std::vector<double>& state) const {
  if (static_cast<int>(state.size()) != state_dim_) {
    throw Error(ErrorCode::kShapeMismatch, "state dimension mismatch");
  }
  return online_.forward(Eigen::Map<const Eigen::VectorXd>(state.data(), state_dim_).eval());
}

int BootstrappedDqn::select_action_training(const std::vector<double>& state, int head,
                                            double epsilon, std::mt19937_64& rng) const {
  if (head < 0 || head >= config_.heads) throw Error(ErrorCode::kRange, "head out of range");
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  if (coin(rng) < epsilon) {
    std::uniform_int_distribution<int> pick(0, action_count_ - 1);
    return pick(rng);
  }
  return greedy_action(q_values(state)[head]);
}

int BootstrappedDqn::select_action_voting(const std::vector<double>& state) const {
  return vote(q_values(state));
}

namespace {

Eigen::MatrixXd stack_states(const std::vector<const Transition*>& batch, bool next, int dim) {
  Eigen::MatrixXd m(dim, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = next ? batch[i]->next_state : batch[i]->state;
    if (static_cast<int>(s.size()) != dim) {
      throw Error(ErrorCode::kShapeMismatch, "transition state dimension mismatch");
    }
    m.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(s.data(), dim);
  }
  return m;
}

}  // namespace

Eigen::MatrixXd BootstrappedDqn::td_targets(const std::vector<const Transition*>& batch) const {
  const int heads = config_.heads;
  const auto n = static_cast<Eigen::Index>(batch.size());
  const Eigen::MatrixXd next = stack_states(batch, true, state_dim_);
  const auto q_target = target_.forward(next);
  std::vector<Eigen::MatrixXd> q_online;
  if (config_.double_dqn) q_online = online_.forward(next);

  Eigen::MatrixXd y(heads, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = *batch[i];
    for (int k = 0; k < heads; ++k) {
      double bootstrap = 0.0;
      if (!t.terminal) {
        if (config_.double_dqn) {
          const int a = greedy_action(q_online[k].col(i));
          bootstrap = q_target[k](a, i);
        } else {
          bootstrap = q_target[k].col(i).maxCoeff();
        }
      }
      y(k, i) = t.reward + t.discount * bootstrap;
    }
  }
  return y;
}

double BootstrappedDqn::train_on(const std::vector<const Transition*>& batch) {
  const int heads = config_.heads;
  const auto n = static_cast<Eigen::Index>(batch.size());
  QNetwork::Cache cache;
  const auto q = online_.forward(stack_states(batch, false, state_dim_), &cache);
  const Eigen::MatrixXd y = td_targets(batch);

  std::vector<Eigen::MatrixXd> grads(heads, Eigen::MatrixXd::Zero(action_count_, n));
  std::vector<char> head_mask(heads, 0);
  double loss = 0.0;
  int used = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = *batch[i];
    if (static_cast<int>(t.mask.size()) != heads) {
      throw Error(ErrorCode::kShapeMismatch, "transition mask length differs from head count");
    }
    for (int k = 0; k < heads; ++k) {
      if (!t.mask[k]) continue;
      const double err = y(k, i) - q[k](t.action, i);
      grads[k](t.action, i) = -err / static_cast<double>(n);
      head_mask[k] = 1;
      loss += err * err;
      ++used;
    }
  }
  if (used > 0) {
    const Eigen::VectorXd g = online_.backward(cache, grads, head_mask);
    adam_.step(online_.params(), g);
  }
  ++gradient_steps_;
  if (gradient_steps_ % config_.target_period == 0) sync_target();
  return used > 0 ? loss / used : 0.0;
}

double BootstrappedDqn::train_step(const ReplayBuffer& buffer, std::mt19937_64& rng) {
  if (buffer.size() < static_cast<std::size_t>(config_.batch)) {
    throw Error(ErrorCode::kParameter, "replay buffer holds fewer items than the batch size");
  }
  const auto idx = buffer.sample_indices(config_.batch, rng);
  std::vector<const Transition*> batch;
  batch.reserve(idx.size());
  for (auto i : idx) batch.push_back(&buffer[i]);
  return train_on(batch);
}

double TrainingCurves::final_collision_rate(int window) const {
  const int n = static_cast<int>(episodes.size());
  const int start = std::max(0, n - window);
  int count = 0;
  int hits = 0;
  for (int i = start; i < n; ++i) {
    if (episodes[i].aborted) continue;
    ++count;
    hits += episodes[i].collision ? 1 : 0;
  }
  return count ? static_cast<double>(hits) / count : 0.0;
}

double TrainingCurves::mean_reward(int first, int last) const {
  double sum = 0.0;
  int count = 0;
  for (int i = std::max(0, first); i < std::min<int>(last, episodes.size()); ++i) {
    if (episodes[i].aborted) continue;
    sum += episodes[i].reward;
    ++count;
  }
  return count ? sum / count : 0.0;
}

void TrainingCurves::write_csv(std::ostream& out) const {
  out.precision(17);
  out << "episode,reward,collision,mean_speed,head,decisions,loss,aborted\n";
  for (const auto& e : episodes) {
    out << e.episode << ',' << e.reward << ',' << (e.collision ? 1 : 0) << ',' << e.mean_speed
        << ',' << e.head << ',' << e.decisions << ',' << e.loss << ',' << (e.aborted ? 1 : 0)
        << '\n';
  }
}

std::uint64_t episode_seed(std::uint64_t seed, int e) {
  return seed * 1000003ULL + static_cast<std::uint64_t>(e);
}

TrainingCurves run_training(BootstrappedDqn& agent, DecisionEnvironment& env,
                            const EpisodeCallback& on_episode) {
  const AgentConfig& cfg = agent.config();
  if (env.state_dim() != agent.state_dim() || env.action_count() != agent.action_count()) {
    throw Error(ErrorCode::kShapeMismatch, "agent and environment dimensions differ");
  }
  std::mt19937_64 rng(cfg.seed ^ 0xa5a5a5a5ULL);
  std::bernoulli_distribution mask_draw(cfg.mask_probability);
  std::uniform_int_distribution<int> head_draw(0, cfg.heads - 1);
  ReplayBuffer buffer(cfg.capacity);
  TrainingCurves curves;
  long decisions_total = 0;

  for (int e = 0; e < cfg.episodes; ++e) {
    EpisodeStats stats;
    stats.episode = e;
    stats.head = head_draw(rng);
    const double epsilon = cfg.epsilon(e);
    double speed_sum = 0.0;
    std::size_t intervals = 0;
    double loss_sum = 0.0;
    int loss_count = 0;
    try {
      std::vector<double> state = env.reset(episode_seed(cfg.seed, e));
      while (true) {
        const int action = agent.select_action_training(state, stats.head, epsilon, rng);
        StepResult res = env.step(action);
        const auto [reward, discount] = accumulate_rewards(res.rewards, cfg.gamma);
        Transition t;
        t.state = std::move(state);
        t.action = action;
        t.reward = reward;
        t.next_state = res.next_state;
        t.terminal = res.terminal;
        t.discount = discount;
        t.mask.resize(cfg.heads);
        for (auto& m : t.mask) m = mask_draw(rng) ? 1 : 0;
        buffer.push(std::move(t));

        for (double r : res.rewards) stats.reward += r;
        speed_sum += res.speed * res.rewards.size();
        intervals += res.rewards.size();
        stats.collision = stats.collision || res.collision;
        ++stats.decisions;
        ++decisions_total;
        if (buffer.size() >= static_cast<std::size_t>(cfg.batch) &&
            decisions_total % cfg.train_every == 0) {
          loss_sum += agent.train_step(buffer, rng);
          ++loss_count;
        }
        state = std::move(res.next_state);
        if (res.terminal || res.truncated) break;
      }
    } catch (const Error& err) {
      stats.aborted = true;
      stats.error = err.what();
    }
    stats.mean_speed = intervals ? speed_sum / intervals : 0.0;
    stats.loss = loss_count ? loss_sum / loss_count : 0.0;
    curves.episodes.push_back(stats);
    if (on_episode) on_episode(stats);
  }
  return curves;
}

}  // namespace cruise
