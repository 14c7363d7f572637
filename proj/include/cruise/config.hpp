#pragma once

#include <string>

#include "cruise/agent.hpp"
#include "cruise/irl.hpp"
#include "cruise/motion_control.hpp"

namespace cruise {

struct HarnessConfig {
  int eval_seeds = 10;
  std::uint64_t eval_seed_base = 9000;
  int collision_eval_seeds = 50;
  double sequential_duration = 2.0;  // fixed lane-change time of the sequential variant
  int threads = 0;                   // 0 uses the hardware concurrency
};

/// Everything a run needs; every field has a default and JSON overrides any
/// subset of them.
struct ExperimentConfig {
  ScenarioConfig scenario;
  PlannerConfig planner;
  ControlLimits limits;
  WeightPresets presets;
  PiGains pi;
  AgentConfig agent;
  IrlConfig irl;
  SynthExpertConfig synth;
  HarnessConfig harness;
  WeightVector irl_weights = WeightVector(-100.0, -10.0, -1.0, -5.0);

  void validate() const;
};

ExperimentConfig default_config();
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& config);

}  // namespace cruise
