#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cruise/config.hpp"
#include "cruise/dynamics.hpp"
#include "cruise/error.hpp"
#include "cruise/experiment.hpp"
#include "cruise/harness.hpp"
#include "cruise/irl.hpp"
#include "cruise/qp.hpp"

namespace py = pybind11;
using namespace cruise;

namespace {

ExperimentConfig parse_config(const std::string& text) {
  return text.empty() ? default_config() : config_from_json_text(text);
}

py::dict solve(const Eigen::MatrixXd& h, const Eigen::VectorXd& f, std::optional<Eigen::MatrixXd> a,
               std::optional<Eigen::VectorXd> b, std::optional<Eigen::MatrixXd> e,
               std::optional<Eigen::VectorXd> e_rhs) {
  QpProblem p = QpProblem::unconstrained(h, f);
  if (a) {
    p.a_ineq = *a;
    p.b_ineq = b.value_or(Eigen::VectorXd());
  }
  if (e) {
    p.a_eq = *e;
    p.b_eq = e_rhs.value_or(Eigen::VectorXd());
  }
  const QpSolution s = solve_qp(p);
  py::dict out;
  out["x"] = s.x;
  out["status"] = std::string(to_string(s.status));
  out["iterations"] = s.iterations;
  out["objective"] = s.objective;
  out["lambda_ineq"] = s.lambda_ineq;
  out["nu_eq"] = s.nu_eq;
  return out;
}

py::dict episode_dict(const EpisodeResult& r) {
  py::dict d;
  d["seed"] = r.seed;
  d["reward"] = r.reward;
  d["collision"] = r.collision;
  d["off_road"] = r.off_road;
  d["mean_speed"] = r.mean_speed;
  d["decisions"] = r.decisions;
  d["lane_changes"] = r.lane_changes;
  d["valid"] = r.valid;
  return d;
}

}  // namespace

PYBIND11_MODULE(_cruise, m) {
  m.doc() = "Integrated decision and motion control for highway driving";

  static py::exception<Error> error(m, "CruiseError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, (std::string(to_string(e.code())) + ": " + e.what()).c_str());
    }
  });

  py::class_<VehicleParams>(m, "VehicleParams")
      .def(py::init<>())
      .def_readwrite("mass", &VehicleParams::mass)
      .def_readwrite("yaw_inertia", &VehicleParams::yaw_inertia)
      .def_readwrite("lf", &VehicleParams::lf)
      .def_readwrite("lr", &VehicleParams::lr)
      .def_readwrite("kf", &VehicleParams::kf)
      .def_readwrite("kr", &VehicleParams::kr)
      .def_readwrite("mu", &VehicleParams::mu);

  py::class_<VehicleState>(m, "VehicleState")
      .def(py::init<>())
      .def(py::init([](double vx, double vy, double yaw, double yaw_rate, double x, double y) {
             return VehicleState{vx, vy, yaw, yaw_rate, x, y};
           }),
           py::arg("vx") = 0.0, py::arg("vy") = 0.0, py::arg("yaw") = 0.0,
           py::arg("yaw_rate") = 0.0, py::arg("x") = 0.0, py::arg("y") = 0.0)
      .def_readwrite("vx", &VehicleState::vx)
      .def_readwrite("vy", &VehicleState::vy)
      .def_readwrite("yaw", &VehicleState::yaw)
      .def_readwrite("yaw_rate", &VehicleState::yaw_rate)
      .def_readwrite("x", &VehicleState::x)
      .def_readwrite("y", &VehicleState::y)
      .def("to_array", [](const VehicleState& s) { return Eigen::VectorXd(to_vector(s)); });

  m.def(
      "step_dynamics",
      [](const VehicleState& s, double ax, double steer, double dt, const VehicleParams& p) {
        return step_dynamics(s, ControlInput{ax, steer}, dt, p);
      },
      py::arg("state"), py::arg("ax"), py::arg("steer"), py::arg("dt") = 0.01,
      py::arg("params") = VehicleParams{});
  m.def("sideslip", &sideslip);

  m.def(
      "quintic_reference",
      [](double lateral, double duration, double speed, const std::vector<double>& times) {
        const CandidatePath p = make_candidate(0.0, 0.0, lateral, speed, duration, PlannerConfig{});
        std::vector<std::pair<double, double>> out;
        for (double t : times) {
          const ReferenceState r = reference_states(p, t);
          out.emplace_back(r.y, r.y_rate);
        }
        return out;
      },
      py::arg("lateral"), py::arg("duration"), py::arg("speed"), py::arg("times"),
      "(y, dy/dt) of a lane-change reference at each time.");

  m.def("solve_qp", &solve, py::arg("h"), py::arg("f"), py::arg("a") = py::none(),
        py::arg("b") = py::none(), py::arg("e") = py::none(), py::arg("e_rhs") = py::none(),
        "minimize 1/2 x'Hx + f'x subject to Ax <= b, Ex = e_rhs.");

  m.def("default_config_json", [] { return config_to_json_text(default_config()); });
  m.def("normalize_config_json",
        [](const std::string& text) { return config_to_json_text(parse_config(text)); },
        "Fills defaults and validates a partial JSON config.");

  py::class_<DrivingTask>(m, "DrivingTask")
      .def(py::init([](const std::string& config, const std::string& variant) {
             return std::make_unique<DrivingTask>(parse_config(config), parse_variant(variant));
           }),
           py::arg("config") = "", py::arg("variant") = "integrated")
      .def_property_readonly("state_dim", &DrivingTask::state_dim)
      .def_property_readonly("action_count", &DrivingTask::action_count)
      .def_property_readonly("elapsed", &DrivingTask::elapsed)
      .def_property_readonly("lane_changes", &DrivingTask::lane_changes)
      .def_property_readonly("ego", [](const DrivingTask& t) { return t.env().ego(); })
      .def("reset", &DrivingTask::reset, py::arg("seed"))
      .def("step", [](DrivingTask& t, int action) {
        const StepResult r = t.step(action);
        py::dict info;
        info["rewards"] = r.rewards;
        info["collision"] = r.collision;
        info["truncated"] = r.truncated;
        info["speed"] = r.speed;
        double total = 0.0;
        for (double x : r.rewards) total += x;
        return py::make_tuple(r.next_state, total, r.terminal || r.truncated, info);
      });

  m.def(
      "synth_and_train_irl",
      [](const std::string& config) {
        const ExperimentConfig c = parse_config(config);
        SynthExpertConfig s = c.synth;
        s.true_weights = c.irl_weights;
        const IrlDataset data = synth_expert(c.scenario, c.planner, s);
        const IrlResult r = train_irl(data.train, c.irl);
        py::dict out;
        out["weights"] = Eigen::VectorXd(r.weights);
        out["objective"] = r.objective;
        out["train"] = data.train.size();
        out["eval"] = data.eval.size();
        out["agreement"] = choice_agreement(data.eval, r.weights);
        return out;
      },
      py::arg("config") = "");

  m.def(
      "evaluate_policy",
      [](const std::string& config, const std::string& variant,
         const std::function<int(const std::vector<double>&)>& policy, int seeds) {
        ExperimentConfig c = parse_config(config);
        c.harness.threads = 1;  // the callback holds the interpreter lock
        const VariantSummary s =
            evaluate_variant(c, parse_variant(variant), policy, evaluation_seeds(c, seeds));
        py::list episodes;
        for (const auto& e : s.episodes) episodes.append(episode_dict(e));
        py::dict out;
        out["mean_reward"] = s.mean_reward;
        out["mean_speed"] = s.mean_speed;
        out["collision_rate"] = s.collision_rate;
        out["episodes"] = episodes;
        return out;
      },
      py::arg("config"), py::arg("variant"), py::arg("policy"), py::arg("seeds") = 10);

  m.def(
      "train_agent",
      [](const std::string& config, const std::string& variant, const std::string& checkpoint) {
        const ExperimentConfig c = parse_config(config);
        TrainingRun run = [&] {
          py::gil_scoped_release release;
          return train_variant(c, parse_variant(variant), c.agent);
        }();
        if (!checkpoint.empty()) run.agent.online().save_file(checkpoint);
        py::list curve;
        for (const auto& e : run.curves.episodes) {
          py::dict d;
          d["episode"] = e.episode;
          d["reward"] = e.reward;
          d["collision"] = e.collision;
          d["mean_speed"] = e.mean_speed;
          curve.append(d);
        }
        return curve;
      },
      py::arg("config"), py::arg("variant") = "integrated", py::arg("checkpoint") = "");
}
