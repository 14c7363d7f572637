#include "cruise/experiment.hpp"

namespace cruise {

TrainingRun train_variant(const ExperimentConfig& config, FrameworkVariant variant,
                          const AgentConfig& agent, const EpisodeCallback& on_episode) {
  DrivingTask task(config, variant);
  TrainingRun run{make_agent(config, variant, agent), {}};
  run.curves = run_training(run.agent, task, on_episode);
  return run;
}

std::vector<DrlEntry> drl_lineup(const AgentConfig& base, bool head_sweep) {
  std::vector<DrlEntry> out;
  out.push_back({"dqn", 1, false, {}});
  out.push_back({"double-dqn", 1, true, {}});
  out.push_back({"bootstrapped-k" + std::to_string(base.heads), base.heads, false, {}});
  if (head_sweep) {
    for (int k : {2, 4, 6, 8}) {
      if (k == base.heads) continue;
      out.push_back({"bootstrapped-k" + std::to_string(k), k, false, {}});
    }
  }
  return out;
}

void train_lineup(const ExperimentConfig& config, FrameworkVariant variant,
                  std::vector<DrlEntry>& lineup, const EpisodeCallback& on_episode) {
  for (auto& entry : lineup) {
    AgentConfig a = config.agent;
    a.heads = entry.heads;
    a.double_dqn = entry.double_dqn;
    // a single head learns from every transition
    if (entry.heads == 1) a.mask_probability = 1.0;
    entry.curves = train_variant(config, variant, a, on_episode).curves;
  }
}

double reduction_pct(double a, double b) { return b != 0.0 ? (b - a) / b * 100.0 : 0.0; }

}  // namespace cruise
