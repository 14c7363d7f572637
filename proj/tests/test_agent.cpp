#include "cruise/agent.hpp"

#include <array>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "cruise/error.hpp"
#include "oracles.hpp"

namespace cruise {
namespace {

AgentConfig small_config(int heads) {
  AgentConfig c;
  c.heads = heads;
  c.shared_layers = {16};
  c.head_layers = {16};
  c.batch = 8;
  c.capacity = 100;
  c.seed = 3;
  return c;
}

// Overwrites head k's output bias and zeroes its last weight matrix, so the
// head's Q-values equal `q` for every input.
void set_head_output(QNetwork& net, int head, const Eigen::VectorXd& q) {
  const ParamBlock b = net.blocks()[1 + head];
  const int outputs = net.topology().outputs;
  const int fan_in = net.topology().head.empty() ? net.topology().shared.back()
                                                 : net.topology().head.back();
  const Eigen::Index bias = b.offset + b.size - outputs;
  net.params().segment(bias - static_cast<Eigen::Index>(fan_in) * outputs,
                       static_cast<Eigen::Index>(fan_in) * outputs)
      .setZero();
  net.params().segment(bias, outputs) = q;
}

TEST(Catalog, DecodeExamples) {
  const ActionCatalog cat;
  ASSERT_EQ(cat.size(), 12);
  EXPECT_EQ(cat.decode(0), (DiscreteAction{Maneuver::kAccelerate, 1}));
  EXPECT_EQ(cat.decode(9), (DiscreteAction{Maneuver::kLaneChange, 1}));
  EXPECT_EQ(cat.decode(4), (DiscreteAction{Maneuver::kHold, 2}));
  EXPECT_EQ(cat.decode(11), (DiscreteAction{Maneuver::kLaneChange, 3}));
  const WeightPresets presets;
  const MpcWeights k = presets.keeping(cat.decode(0).level);
  EXPECT_DOUBLE_EQ(k.p1, 0.5);
  EXPECT_DOUBLE_EQ(k.r1, 2.0);
  const MpcWeights c = presets.changing(cat.decode(9).level);
  EXPECT_DOUBLE_EQ(c.p21, 0.5);
  EXPECT_DOUBLE_EQ(c.p22, 5.0);
  EXPECT_DOUBLE_EQ(c.r2, 20.0);
  EXPECT_DOUBLE_EQ(reference_acceleration(cat.decode(0).maneuver), 2.0);
  EXPECT_DOUBLE_EQ(reference_acceleration(cat.decode(3).maneuver), 0.0);
  EXPECT_DOUBLE_EQ(reference_acceleration(cat.decode(6).maneuver), -2.0);
  EXPECT_DOUBLE_EQ(reference_acceleration(cat.decode(9).maneuver), 0.0);
}

TEST(Catalog, EncodeDecodeIdentity) {
  for (ActionSet set : {ActionSet::kFull, ActionSet::kManeuverOnly}) {
    const ActionCatalog cat(set, 2);
    for (int i = 0; i < cat.size(); ++i) EXPECT_EQ(cat.encode(cat.decode(i)), i);
    EXPECT_THROW(cat.decode(cat.size()), Error);
    EXPECT_THROW(cat.decode(-1), Error);
  }
  const ActionCatalog fixed(ActionSet::kManeuverOnly, 3);
  EXPECT_EQ(fixed.size(), 4);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(fixed.decode(i).level, 3);
  EXPECT_THROW(ActionCatalog(ActionSet::kManeuverOnly, 4), Error);
}

TEST(Selection, GreedyAndTieBreak) {
  Eigen::VectorXd q = Eigen::VectorXd::Zero(12);
  q(7) = 1.0;
  EXPECT_EQ(greedy_action(q), 7);
  q.setZero();
  q(3) = q(5) = 2.0;
  EXPECT_EQ(greedy_action(q), 3);
}

TEST(Selection, TrainingUsesActiveHead) {
  BootstrappedDqn agent(small_config(3), 4, 12);
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(12);
    q(2 + k) = 1.0;
    set_head_output(agent.online(), k, q);
  }
  std::mt19937_64 rng(1);
  const std::vector<double> s(4, 0.3);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(agent.select_action_training(s, k, 0.0, rng), 2 + k);
  EXPECT_THROW(agent.select_action_training(s, 3, 0.0, rng), Error);
}

TEST(Selection, FullExplorationIsUniform) {
  BootstrappedDqn agent(small_config(1), 4, 12);
  std::mt19937_64 rng(2);
  std::array<int, 12> counts{};
  const int draws = 24000;
  for (int i = 0; i < draws; ++i) ++counts[agent.select_action_training({0, 0, 0, 0}, 0, 1.0, rng)];
  double chi2 = 0.0;
  const double expected = draws / 12.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 24.725);  // 11 degrees of freedom, alpha 0.01
}

TEST(Voting, Examples) {
  auto one_hot = [](int a) {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(4);
    q(a) = 1.0;
    return q;
  };
  // Identical heads reduce to the single argmax.
  EXPECT_EQ(vote({one_hot(2), one_hot(2), one_hot(2)}), 2);
  // Plurality.
  EXPECT_EQ(vote({one_hot(0), one_hot(0), one_hot(0), one_hot(0), one_hot(3), one_hot(3)}), 0);
  // 3-3 tie resolved by summed Q.
  std::vector<Eigen::VectorXd> tie;
  for (int i = 0; i < 3; ++i) tie.push_back(one_hot(0));
  for (int i = 0; i < 3; ++i) {
    Eigen::VectorXd q = Eigen::VectorXd::Zero(4);
    q(1) = 1.5;
    tie.push_back(q);
  }
  EXPECT_EQ(vote(tie), 1);
  // Full tie falls to the lowest index.
  EXPECT_EQ(vote({one_hot(1), one_hot(3)}), 1);
  EXPECT_THROW(vote({}), Error);
}

TEST(Voting, TieBreakEnumeration) {
  // Random quantized 4-head tables: the winner maximizes (votes, sum, -index).
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Eigen::VectorXd> q(4, Eigen::VectorXd(3));
    for (auto& v : q) {
      for (int a = 0; a < 3; ++a) v(a) = std::round(4.0 * u(rng)) / 4.0;
    }
    std::array<int, 3> votes{};
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(3);
    for (const auto& v : q) {
      ++votes[greedy_action(v)];
      sum += v;
    }
    int expected = 0;
    for (int a = 1; a < 3; ++a) {
      if (std::make_pair(votes[a], sum(a)) > std::make_pair(votes[expected], sum(expected))) {
        expected = a;
      }
    }
    EXPECT_EQ(vote(q), expected);
  }
}

TEST(Voting, SingleHeadEqualsArgmax) {
  BootstrappedDqn agent(small_config(1), 4, 12);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> s{n(rng), n(rng), n(rng), n(rng)};
    EXPECT_EQ(agent.select_action_voting(s), greedy_action(agent.q_values(s)[0]));
  }
}

Transition make_transition(double reward, bool terminal, double discount, int heads,
                           int action = 0) {
  Transition t;
  t.state = {1.0, 0.0, 0.0, 0.0};
  t.next_state = {0.0, 1.0, 0.0, 0.0};
  t.action = action;
  t.reward = reward;
  t.terminal = terminal;
  t.discount = discount;
  t.mask.assign(heads, 1);
  return t;
}

TEST(Targets, Examples) {
  BootstrappedDqn agent(small_config(2), 4, 3);
  set_head_output(agent.online(), 0, Eigen::Vector3d(0.5, 2.0, -1.0));
  set_head_output(agent.online(), 1, Eigen::Vector3d(4.0, 0.0, 1.0));
  agent.sync_target();
  const Transition live = make_transition(1.0, false, 0.95, 2);
  const Transition dead = make_transition(1.0, true, 0.95, 2);
  const Transition myopic = make_transition(1.0, false, 0.0, 2);
  const Eigen::MatrixXd y = agent.td_targets({&live, &dead, &myopic});
  EXPECT_NEAR(y(0, 0), 2.9, 1e-12);  // own target head max = 2
  EXPECT_NEAR(y(1, 0), 1.0 + 0.95 * 4.0, 1e-12);
  EXPECT_EQ(y(0, 1), 1.0);
  EXPECT_EQ(y(1, 1), 1.0);
  EXPECT_EQ(y(0, 2), 1.0);
  EXPECT_EQ(y(1, 2), 1.0);
}

TEST(Targets, DoubleDqnEvaluatesOnlineArgmax) {
  AgentConfig c = small_config(1);
  c.double_dqn = true;
  BootstrappedDqn agent(c, 4, 3);
  set_head_output(agent.online(), 0, Eigen::Vector3d(0.0, 5.0, 3.0));
  agent.sync_target();
  set_head_output(agent.online(), 0, Eigen::Vector3d(0.0, 1.0, 9.0));  // online argmax 2
  const Transition t = make_transition(0.5, false, 0.9, 1);
  EXPECT_NEAR(agent.td_targets({&t})(0, 0), 0.5 + 0.9 * 3.0, 1e-12);
}

TEST(Rewards, Accumulate) {
  const auto [sum, discount] = accumulate_rewards({1.0, 2.0, 4.0}, 0.5);
  EXPECT_DOUBLE_EQ(sum, 1.0 + 1.0 + 1.0);
  EXPECT_DOUBLE_EQ(discount, 0.125);
  const auto [s1, d1] = accumulate_rewards({3.0}, 0.95);
  EXPECT_DOUBLE_EQ(s1, 3.0);
  EXPECT_DOUBLE_EQ(d1, 0.95);
}

TEST(Training, AllMasksZeroLeaveParameters) {
  BootstrappedDqn agent(small_config(3), 4, 3);
  Transition t = make_transition(1.0, false, 0.95, 3);
  t.mask.assign(3, 0);
  const Eigen::VectorXd before = agent.online().params();
  EXPECT_EQ(agent.train_on({&t, &t}), 0.0);
  EXPECT_EQ(agent.online().params(), before);
}

TEST(Training, MaskedHeadIsBitwiseFrozen) {
  BootstrappedDqn agent(small_config(3), 4, 3);
  Transition t = make_transition(1.0, false, 0.95, 3, 1);
  t.mask = {1, 0, 1};
  const ParamBlock b = agent.online().blocks()[2];
  const Eigen::VectorXd frozen = agent.online().params().segment(b.offset, b.size);
  const Eigen::VectorXd core = agent.online().params().segment(0, agent.online().blocks()[0].size);
  for (int i = 0; i < 10; ++i) agent.train_on({&t});
  EXPECT_EQ(agent.online().params().segment(b.offset, b.size), frozen);
  EXPECT_NE(agent.online().params().segment(0, agent.online().blocks()[0].size), core);
}

TEST(Training, TargetSyncPeriod) {
  AgentConfig c = small_config(2);
  c.target_period = 1;
  BootstrappedDqn every(c, 4, 3);
  const Transition t = make_transition(1.0, false, 0.95, 2, 2);
  for (int i = 0; i < 3; ++i) {
    every.train_on({&t});
    EXPECT_EQ(every.target().params(), every.online().params());
  }
  c.target_period = 4;
  BootstrappedDqn stale(c, 4, 3);
  const Eigen::VectorXd initial = stale.target().params();
  for (int i = 1; i <= 8; ++i) {
    stale.train_on({&t});
    if (i < 4) {
      EXPECT_EQ(stale.target().params(), initial);
    } else if (i == 4 || i == 8) {
      EXPECT_EQ(stale.target().params(), stale.online().params());
    } else {
      EXPECT_NE(stale.target().params(), stale.online().params());
    }
  }
}

TEST(Training, TrainStepNeedsFullBatch) {
  BootstrappedDqn agent(small_config(1), 4, 3);
  ReplayBuffer buffer(100);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 7; ++i) buffer.push(make_transition(0.0, false, 0.95, 1));
  EXPECT_THROW(agent.train_step(buffer, rng), Error);
  buffer.push(make_transition(0.0, false, 0.95, 1));
  EXPECT_NO_THROW(agent.train_step(buffer, rng));
  EXPECT_EQ(agent.gradient_steps(), 1);
}

double toy_error(int heads, double mask_p, std::uint64_t seed) {
  return oracle::toy_mdp_error(heads, mask_p, 5000, seed);
}

TEST(ToyMdp, ValueIterationOracle) {
  const Eigen::Matrix2d q = oracle::toy_q_star(0.5);
  // Closed form: V(s0) = 1 + 0.5 V(s1), V(s1) = 2 + 0.5 V(s0).
  EXPECT_NEAR(q.row(0).maxCoeff(), 8.0 / 3.0, 1e-12);
  EXPECT_NEAR(q.row(1).maxCoeff(), 10.0 / 3.0, 1e-12);
}

TEST(ToyMdp, SingleHeadConverges) { EXPECT_LE(toy_error(1, 1.0, 7), 0.05); }

TEST(ToyMdp, BootstrappedHeadsConverge) { EXPECT_LE(toy_error(6, 0.5, 8), 0.05); }

TEST(Replay, RingOverwritesOldest) {
  ReplayBuffer buffer(3);
  for (int i = 0; i < 5; ++i) buffer.push(make_transition(i, false, 0.95, 1));
  ASSERT_EQ(buffer.size(), 3u);
  std::multiset<double> rewards;
  for (std::size_t i = 0; i < buffer.size(); ++i) rewards.insert(buffer[i].reward);
  EXPECT_EQ(rewards, (std::multiset<double>{2.0, 3.0, 4.0}));
  EXPECT_THROW(ReplayBuffer(0), Error);
  ReplayBuffer empty(4);
  std::mt19937_64 rng(1);
  EXPECT_THROW(empty.sample_indices(1, rng), Error);
}

TEST(Replay, SamplingIsUniform) {
  ReplayBuffer buffer(100);
  for (int i = 0; i < 150; ++i) buffer.push(make_transition(i, false, 0.95, 1));
  ASSERT_EQ(buffer.size(), 100u);
  std::mt19937_64 rng(17);
  std::vector<int> counts(100, 0);
  for (int i = 0; i < 1000; ++i) {
    for (auto idx : buffer.sample_indices(100, rng)) ++counts[idx];
  }
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
  EXPECT_LT(chi2, 134.642);  // 99 degrees of freedom, alpha 0.01
}

TEST(Config, EpsilonSchedule) {
  AgentConfig c;
  c.episodes = 1000;
  EXPECT_DOUBLE_EQ(c.epsilon(0), 1.0);
  EXPECT_NEAR(c.epsilon(150), 0.525, 1e-12);
  EXPECT_NEAR(c.epsilon(300), 0.05, 1e-12);
  EXPECT_NEAR(c.epsilon(999), 0.05, 1e-12);
}

TEST(Config, Validation) {
  AgentConfig c;
  EXPECT_NO_THROW(c.validate());
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = AgentConfig{};
  c.heads = 0;
  EXPECT_THROW(c.validate(), Error);
  c = AgentConfig{};
  c.mask_probability = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c = AgentConfig{};
  c.target_period = 0;
  EXPECT_THROW(c.validate(), Error);
}

// Chain of length 5: action 1 moves right, action 0 stays; reward 1 at the end.
class ChainEnv : public DecisionEnvironment {
 public:
  explicit ChainEnv(int fail_episode = -1) : fail_episode_(fail_episode) {}
  int state_dim() const override { return 5; }
  int action_count() const override { return 2; }
  std::vector<double> reset(std::uint64_t) override {
    ++episode_;
    pos_ = 0;
    steps_ = 0;
    return obs();
  }
  StepResult step(int action) override {
    if (episode_ == fail_episode_ && steps_ == 2) throw Error(ErrorCode::kInstability, "boom");
    ++steps_;
    if (action == 1) ++pos_;
    StepResult r;
    r.terminal = pos_ >= 4;
    r.truncated = steps_ >= 12;
    r.rewards = {r.terminal ? 1.0 : 0.0};
    r.speed = static_cast<double>(pos_);
    r.next_state = obs();
    return r;
  }

 private:
  std::vector<double> obs() const {
    std::vector<double> o(5, 0.0);
    o[std::min(pos_, 4)] = 1.0;
    return o;
  }
  int fail_episode_;
  int episode_ = -1;
  int pos_ = 0;
  int steps_ = 0;
};

AgentConfig chain_config() {
  AgentConfig c = small_config(2);
  c.episodes = 60;
  c.batch = 16;
  c.learning_rate = 1e-3;
  c.target_period = 50;
  return c;
}

TEST(RunTraining, DeterministicCurves) {
  auto run = []() {
    BootstrappedDqn agent(chain_config(), 5, 2);
    ChainEnv env;
    std::ostringstream out;
    run_training(agent, env).write_csv(out);
    return std::make_pair(out.str(), agent.online().params());
  };
  const auto a = run();
  const auto b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

TEST(RunTraining, FaultAbortsEpisodeOnly) {
  BootstrappedDqn agent(chain_config(), 5, 2);
  ChainEnv env(3);
  std::vector<int> seen;
  const TrainingCurves curves =
      run_training(agent, env, [&](const EpisodeStats& s) { seen.push_back(s.episode); });
  ASSERT_EQ(curves.episodes.size(), 60u);
  EXPECT_EQ(seen.size(), 60u);
  EXPECT_TRUE(curves.episodes[3].aborted);
  EXPECT_FALSE(curves.episodes[3].error.empty());
  EXPECT_FALSE(curves.episodes[4].aborted);
}

TEST(RunTraining, ZeroLearningRateKeepsParameters) {
  AgentConfig c = chain_config();
  c.learning_rate = 0.0;
  BootstrappedDqn agent(c, 5, 2);
  const Eigen::VectorXd before = agent.online().params();
  ChainEnv env;
  run_training(agent, env);
  EXPECT_EQ(agent.online().params(), before);
  EXPECT_GT(agent.gradient_steps(), 0);
}

TEST(RunTraining, LearnsChain) {
  AgentConfig c = chain_config();
  c.episodes = 150;
  c.train_every = 1;
  BootstrappedDqn agent(c, 5, 2);
  ChainEnv env;
  const TrainingCurves curves = run_training(agent, env);
  EXPECT_GT(curves.mean_reward(120, 150), 0.9);
  std::vector<double> s(5, 0.0);
  s[0] = 1.0;
  EXPECT_EQ(agent.select_action_voting(s), 1);
}

TEST(RunTraining, DimensionMismatchThrows) {
  BootstrappedDqn agent(chain_config(), 4, 2);
  ChainEnv env;
  EXPECT_THROW(run_training(agent, env), Error);
}

}  // namespace
}  // namespace cruise
