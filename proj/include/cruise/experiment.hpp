#pragma once

#include <string>
#include <vector>

#include "cruise/harness.hpp"

namespace cruise {

struct TrainingRun {
  BootstrappedDqn agent;
  TrainingCurves curves;
};

/// Trains a fresh agent for `variant` using `agent` hyperparameters.
TrainingRun train_variant(const ExperimentConfig& config, FrameworkVariant variant,
                          const AgentConfig& agent, const EpisodeCallback& on_episode = {});

struct DrlEntry {
  std::string name;
  int heads = 1;
  bool double_dqn = false;
  TrainingCurves curves;
};

/// DQN, double DQN and the bootstrapped agent under one budget, plus an
/// optional head-count sweep. Every entry shares the same seed.
std::vector<DrlEntry> drl_lineup(const AgentConfig& base, bool head_sweep);

void train_lineup(const ExperimentConfig& config, FrameworkVariant variant,
                  std::vector<DrlEntry>& lineup, const EpisodeCallback& on_episode = {});

/// Relative reduction of `a` against `b` in percent; 0 when `b` is 0.
double reduction_pct(double a, double b);

}  // namespace cruise
