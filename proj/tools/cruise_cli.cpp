#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cruise/error.hpp"
#include "cruise/experiment.hpp"

namespace fs = std::filesystem;
using namespace cruise;

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string variant = "integrated";
  int episodes = 0;
  int threads = -1;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? default_config() : load_config(c.config_path);
  if (c.seed) {
    cfg.agent.seed = *c.seed;
    cfg.synth.seed = *c.seed;
  }
  if (c.episodes > 0) cfg.agent.episodes = c.episodes;
  if (c.threads >= 0) cfg.harness.threads = c.threads;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c) {
  fs::path p(c.out);
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create output directory " + c.out);
  return p;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + p.string());
  return f;
}

void require(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) {
    throw Error(ErrorCode::kMissingArtifact, what + " not found at " + p.string());
  }
}

std::string agent_file(FrameworkVariant v) { return "agent_" + to_string(v) + ".qnet"; }

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Run seed");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--variant", c.variant, "integrated | sequential | semi-integrated");
  app->add_option("--threads", c.threads, "Evaluation workers (0 = hardware)");
}

void print_progress(const EpisodeStats& s) {
  if ((s.episode + 1) % 50 == 0) {
    std::cerr << "episode " << s.episode + 1 << " reward " << s.reward << " collision "
              << s.collision << '\n';
  }
}

IrlDataset synth(const ExperimentConfig& cfg, const fs::path& dir) {
  IrlDataset data = synth_expert(cfg.scenario, cfg.planner, cfg.synth);
  auto f = open_out(dir / "expert_dataset.csv");
  write_dataset_csv(f, data);
  for (const auto& line : data.log) std::cerr << "skipped " << line << '\n';
  return data;
}

WeightVector weights_arg(const std::string& path, const ExperimentConfig& cfg) {
  if (path.empty()) return cfg.irl_weights;
  require(path, "IRL weights");
  return load_weights_json(path);
}

Policy policy_for(const std::string& agent_path, const std::string& fixed,
                  std::optional<BootstrappedDqn>& holder, const ExperimentConfig& cfg,
                  FrameworkVariant v) {
  if (!fixed.empty()) {
    const ActionCatalog cat(action_set_of(v));
    Maneuver m = Maneuver::kHold;
    if (fixed == "accelerate") m = Maneuver::kAccelerate;
    else if (fixed == "decelerate") m = Maneuver::kDecelerate;
    else if (fixed == "lane-change") m = Maneuver::kLaneChange;
    else if (fixed != "hold") throw Error(ErrorCode::kConfig, "unknown fixed policy " + fixed);
    const int a = cat.encode({m, 2});
    return [a](const std::vector<double>&) { return a; };
  }
  require(agent_path, "agent checkpoint");
  holder.emplace(make_agent(cfg, v, cfg.agent));
  holder->load_online(QNetwork::load_file(agent_path));
  return agent_policy(*holder);
}

nlohmann::json summary_json(const VariantSummary& s) {
  nlohmann::json j = {{"variant", s.variant},
                      {"mean_reward", s.mean_reward},
                      {"mean_speed", s.mean_speed},
                      {"collision_rate", s.collision_rate}};
  if (s.longitudinal) {
    j["E1"] = s.longitudinal->e1;
    j["E2"] = s.longitudinal->e2;
    j["E3"] = s.longitudinal->e3;
  } else {
    j["longitudinal"] = "undefined";
  }
  if (s.lateral) {
    j["E1_bar"] = s.lateral->e1;
    j["E2_bar"] = s.lateral->e2;
    j["E3_bar"] = s.lateral->e3;
  } else {
    j["lateral"] = "undefined";
  }
  return j;
}

std::string one_line(std::string s) {
  for (auto& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
    if (ch == '"') ch = '\'';
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Integrated lane-change decision and control experiments"};
  app.require_subcommand(1);
  Common c;

  auto* synth_cmd = app.add_subcommand("synth-expert", "Generate a synthetic expert dataset");
  add_common(synth_cmd, c);

  std::string dataset;
  auto* irl_cmd = app.add_subcommand("train-irl", "Fit path-selection weights");
  add_common(irl_cmd, c);
  irl_cmd->add_option("--dataset", dataset, "Expert dataset CSV (synthesized when absent)");

  std::string weights_path;
  auto* train_cmd = app.add_subcommand("train-agent", "Train a decision agent");
  add_common(train_cmd, c);
  train_cmd->add_option("--episodes", c.episodes, "Override the episode budget");
  train_cmd->add_option("--weights", weights_path, "IRL weights JSON");

  std::string agent_path;
  std::string fixed_policy;
  int seeds = 0;
  bool write_episodes = true;
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a policy on the test seeds");
  add_common(eval_cmd, c);
  eval_cmd->add_option("--agent", agent_path, "Agent checkpoint");
  eval_cmd->add_option("--policy", fixed_policy, "Fixed policy instead of an agent");
  eval_cmd->add_option("--seeds", seeds, "Number of evaluation seeds");
  eval_cmd->add_option("--weights", weights_path, "IRL weights JSON");
  eval_cmd->add_flag("!--no-episode-csv", write_episodes, "Skip per-episode CSVs");

  std::string agent_dir;
  auto* cmp_cmd = app.add_subcommand("compare-frameworks", "Compare the three framework variants");
  add_common(cmp_cmd, c);
  cmp_cmd->add_option("--agent-dir", agent_dir, "Directory holding agent_<variant>.qnet");
  cmp_cmd->add_option("--policy", fixed_policy, "Fixed policy for every variant");
  cmp_cmd->add_option("--seeds", seeds, "Number of evaluation seeds");
  cmp_cmd->add_option("--weights", weights_path, "IRL weights JSON");

  bool sweep = false;
  auto* drl_cmd = app.add_subcommand("compare-drl", "Compare DQN, double DQN and bootstrapped DQN");
  add_common(drl_cmd, c);
  drl_cmd->add_option("--episodes", c.episodes, "Override the episode budget");
  drl_cmd->add_flag("--head-sweep", sweep, "Also train K = 2, 4, 6, 8");
  drl_cmd->add_option("--weights", weights_path, "IRL weights JSON");

  auto* pp_cmd = app.add_subcommand("export-phase-plane", "Export the sideslip / yaw-rate trace");
  add_common(pp_cmd, c);
  pp_cmd->add_option("--agent", agent_path, "Agent checkpoint");
  pp_cmd->add_option("--policy", fixed_policy, "Fixed policy instead of an agent");
  pp_cmd->add_option("--seeds", seeds, "Number of evaluation seeds");
  pp_cmd->add_option("--weights", weights_path, "IRL weights JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error code=usage message=\"" << one_line(e.what()) << "\"\n";
    return 2;
  }

  try {
    ExperimentConfig cfg = load(c);
    const FrameworkVariant variant = parse_variant(c.variant);
    const fs::path dir = out_dir(c);
    using nlohmann::json;

    if (*synth_cmd) {
      const IrlDataset data = synth(cfg, dir);
      std::cout << "train " << data.train.size() << " eval " << data.eval.size() << " skipped "
                << data.log.size() << '\n';
    } else if (*irl_cmd) {
      IrlDataset data;
      if (dataset.empty()) {
        data = synth(cfg, dir);
      } else {
        require(dataset, "expert dataset");
        std::ifstream in(dataset);
        data = read_dataset_csv(in);
      }
      const IrlResult r = train_irl(data.train, cfg.irl);
      save_weights_json((dir / "irl_weights.json").string(), r.weights);
      auto f = open_out(dir / "irl_objective.csv");
      f.precision(17);
      f << "episode,objective\n";
      for (std::size_t i = 0; i < r.objective.size(); ++i) f << i << ',' << r.objective[i] << '\n';
      const double agreement = data.eval.empty() ? 0.0 : choice_agreement(data.eval, r.weights);
      std::cout << "weights " << r.weights.transpose() << " eval_agreement " << agreement << '\n';
    } else if (*train_cmd) {
      cfg.irl_weights = weights_arg(weights_path, cfg);
      TrainingRun run = train_variant(cfg, variant, cfg.agent, print_progress);
      run.agent.online().save_file((dir / agent_file(variant)).string());
      auto f = open_out(dir / ("curve_" + to_string(variant) + ".csv"));
      run.curves.write_csv(f);
      std::cout << "episodes " << run.curves.episodes.size() << " final_collision_rate "
                << run.curves.final_collision_rate(100) << '\n';
    } else if (*eval_cmd || *pp_cmd) {
      cfg.irl_weights = weights_arg(weights_path, cfg);
      std::optional<BootstrappedDqn> holder;
      const Policy policy = policy_for(agent_path, fixed_policy, holder, cfg, variant);
      const auto ids = evaluation_seeds(cfg, seeds > 0 ? seeds : cfg.harness.eval_seeds);
      std::vector<EpisodeLog> logs;
      const VariantSummary s = evaluate_variant(cfg, variant, policy, ids, &logs);
      const std::string tag = to_string(variant);
      {
        auto f = open_out(dir / ("phase_plane_" + tag + ".csv"));
        write_phase_plane_csv(f, logs, ids);
      }
      if (*eval_cmd) {
        if (write_episodes) {
          for (std::size_t i = 0; i < logs.size(); ++i) {
            auto f = open_out(dir / ("episode_" + tag + "_" + std::to_string(ids[i]) + ".csv"));
            logs[i].write_csv(f);
          }
        }
        write_summary_json((dir / ("metrics_" + tag + ".json")).string(), {s}, {});
        std::cout << summary_json(s).dump() << '\n';
      } else {
        std::cout << "rows " << logs.size() << " episodes written\n";
      }
    } else if (*cmp_cmd) {
      cfg.irl_weights = weights_arg(weights_path, cfg);
      const auto ids = evaluation_seeds(cfg, seeds > 0 ? seeds : cfg.harness.eval_seeds);
      std::vector<VariantSummary> out;
      for (FrameworkVariant v : {FrameworkVariant::kIntegrated, FrameworkVariant::kSequential,
                                 FrameworkVariant::kSemiIntegrated}) {
        std::optional<BootstrappedDqn> holder;
        const std::string ckpt =
            fixed_policy.empty() ? (fs::path(agent_dir.empty() ? c.out : agent_dir) /
                                    agent_file(v)).string()
                                 : std::string();
        const Policy policy = policy_for(ckpt, fixed_policy, holder, cfg, v);
        std::vector<EpisodeLog> logs;
        out.push_back(evaluate_variant(cfg, v, policy, ids, &logs));
        auto f = open_out(dir / ("phase_plane_" + to_string(v) + ".csv"));
        write_phase_plane_csv(f, logs, ids);
      }
      const std::vector<PairedDelta> deltas = {paired_delta(out[0], out[1]),
                                               paired_delta(out[0], out[2]),
                                               paired_delta(out[2], out[1])};
      write_summary_json((dir / "compare_frameworks.json").string(), out, deltas);
      for (const auto& s : out) std::cout << summary_json(s).dump() << '\n';
      for (const auto& d : deltas) {
        std::cout << d.a << " vs " << d.b << ": speed " << d.speed_pct << "% reward "
                  << d.reward_pct << "% paired_t " << d.reward_t << '\n';
      }
      std::cout << "reference only, not asserted: integrated vs sequential +2.12% speed, "
                   "+10.25% reward\n";
    } else if (*drl_cmd) {
      cfg.irl_weights = weights_arg(weights_path, cfg);
      auto lineup = drl_lineup(cfg.agent, sweep);
      train_lineup(cfg, variant, lineup, print_progress);
      json j = json::array();
      for (const auto& e : lineup) {
        auto f = open_out(dir / ("curve_" + e.name + ".csv"));
        e.curves.write_csv(f);
        j.push_back({{"name", e.name},
                     {"heads", e.heads},
                     {"double_dqn", e.double_dqn},
                     {"final_collision_rate", e.curves.final_collision_rate(100)},
                     {"final_mean_reward",
                      e.curves.mean_reward(std::max(0, static_cast<int>(e.curves.episodes.size()) - 100),
                                           static_cast<int>(e.curves.episodes.size()))}});
      }
      json root = {{"entries", j},
                   {"reference_only",
                    {{"note", "published reductions; not asserted"},
                     {"vs_dqn_pct", 62.31},
                     {"vs_double_dqn_pct", 43.59}}}};
      auto f = open_out(dir / "compare_drl.json");
      f << root.dump(2) << '\n';
      std::cout << j.dump() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error code=" << to_string(e.code()) << " message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error code=internal message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  }
  return 0;
}
