// Python bindings for the aeail library.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "aeail/cli.hpp"
#include "aeail/errors.hpp"
#include "aeail/evaluation.hpp"
#include "aeail/reward_models.hpp"
#include "aeail/selfcheck.hpp"
#include "aeail/trainer.hpp"

namespace py = pybind11;
using namespace aeail;

namespace {

RewardVariant variant_from(const std::string& name) {
  TrainConfig c;
  apply_config_value(c, "reward", name);
  return c.reward;
}

// Config from `key=value` text plus keyword overrides, resolved.
TrainConfig make_config(const std::string& text, const py::dict& overrides) {
  TrainConfig c = parse_config(text);
  for (const auto& [k, v] : overrides) {
    apply_config_value(c, py::str(k).cast<std::string>(), py::str(v).cast<std::string>());
  }
  return resolve_config(c);
}

py::dict metrics_dict(const IterationMetrics& m) {
  py::dict d;
  d["iteration"] = m.iteration;
  d["reward_loss"] = m.reward_loss;
  d["expert_pseudo_reward"] = m.expert_pseudo_reward;
  d["generated_pseudo_reward"] = m.generated_pseudo_reward;
  d["surrogate_gain"] = m.surrogate_gain;
  d["mean_kl"] = m.mean_kl;
  d["accepted_steps"] = m.accepted_steps;
  d["eval_return_mean"] = m.eval_return_mean;
  d["eval_return_std"] = m.eval_return_std;
  d["scaled_reward"] = m.scaled_reward;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Adversarial imitation learning with auto-encoder rewards";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<NumericFault>(m, "NumericFault", PyExc_ArithmeticError);

  // Closed-form pieces.
  m.def("reward_from_error_w", &reward_from_error_w, py::arg("error"));
  m.def("reward_from_error_js", &reward_from_error_js, py::arg("error"));
  m.def("kl_diag_gaussian_to_prior", &kl_diag_gaussian_to_prior, py::arg("mean"),
        py::arg("logvar"));
  m.def("scaled_reward", &scaled_reward, py::arg("ret"), py::arg("random_ret"),
        py::arg("expert_ret"));
  m.def("relative_improvement", &relative_improvement, py::arg("ours"), py::arg("baseline"));

  // Environments.
  py::class_<EnvSpec>(m, "EnvSpec")
      .def_property_readonly("name", [](const EnvSpec& s) { return std::string(to_string(s.name)); })
      .def_readonly("state_dim", &EnvSpec::state_dim)
      .def_readonly("action_dim", &EnvSpec::action_dim)
      .def_readonly("action_low", &EnvSpec::action_low)
      .def_readonly("action_high", &EnvSpec::action_high)
      .def_readwrite("horizon", &EnvSpec::horizon)
      .def_readonly("dt", &EnvSpec::dt);
  m.def("make_env_spec", py::overload_cast<std::string_view>(&make_env_spec), py::arg("name"));
  m.def("env_reset", &env_reset, py::arg("spec"), py::arg("seed"));
  m.def(
      "env_step",
      [](const EnvSpec& spec, const Vector& s, const Vector& a) {
        const Transition t = env_step(spec, s, a);
        return py::make_tuple(t.s_next, t.true_reward, t.done);
      },
      py::arg("spec"), py::arg("state"), py::arg("action"),
      "Returns (next_state, true_reward, done).");
  m.def(
      "expert_action",
      [](const EnvSpec& spec, const Vector& s) { return scripted_expert(spec)(s); },
      py::arg("spec"), py::arg("state"));

  // Demonstrations.
  py::class_<DemonstrationSet>(m, "DemonstrationSet")
      .def_property_readonly("env", [](const DemonstrationSet& d) { return std::string(to_string(d.env)); })
      .def_readonly("noise_sigma", &DemonstrationSet::noise_sigma)
      .def_property_readonly("n_trajectories",
                             [](const DemonstrationSet& d) { return d.trajectories.size(); })
      .def_property_readonly("pair_count", &DemonstrationSet::pair_count)
      .def("features", &DemonstrationSet::features);
  m.def(
      "generate_demos",
      [](const EnvSpec& spec, int n, std::uint64_t seed) {
        return generate_demos(spec, scripted_expert(spec), n, seed);
      },
      py::arg("spec"), py::arg("n"), py::arg("seed") = 0);
  m.def("corrupt_demos", &corrupt_demos, py::arg("demos"), py::arg("sigma"), py::arg("seed"));
  m.def(
      "save_demos",
      [](const std::filesystem::path& p, const DemonstrationSet& d) {
        save_demos(p, d, make_env_spec(d.env));
      },
      py::arg("path"), py::arg("demos"));
  m.def("load_demos", &load_demos, py::arg("path"));

  // Reward models.
  py::class_<RewardModel>(m, "RewardModel")
      .def_property_readonly("variant",
                             [](const RewardModel& r) { return std::string(to_string(r.variant())); })
      .def_property_readonly("input_dim", &RewardModel::input_dim)
      .def("update", &RewardModel::update, py::arg("expert"), py::arg("generated"))
      .def("loss", &RewardModel::loss, py::arg("expert"), py::arg("generated"))
      .def("episode_rewards", &RewardModel::episode_rewards, py::arg("features"))
      .def("latent_activations", &RewardModel::latent_activations, py::arg("features"))
      .def("max_abs_parameter", &RewardModel::max_abs_parameter);
  m.def(
      "make_reward_model",
      [](const std::string& variant, const DemonstrationSet& demos, int hidden,
         double learning_rate, std::uint64_t seed) {
        RewardModelConfig rc;
        rc.variant = variant_from(variant);
        rc.hidden = hidden;
        rc.learning_rate = learning_rate;
        rc.seed = seed;
        return make_reward_model(rc, demos.features(), demos.normalizer);
      },
      py::arg("variant"), py::arg("demos"), py::arg("hidden") = 100,
      py::arg("learning_rate") = 3e-4, py::arg("seed") = 0,
      "Reward model over the demonstrations' (state, action) features.");

  // Training.
  m.def(
      "resolve_config",
      [](const std::string& text, const py::dict& overrides) {
        return config_to_text(make_config(text, overrides));
      },
      py::arg("text") = "", py::arg("overrides") = py::dict(),
      "Canonical config text after defaults and validation.");
  m.def(
      "train",
      [](const std::string& text, const py::dict& overrides) {
        const TrainConfig c = make_config(text, overrides);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(c);
        }
        py::dict d;
        d["run_dir"] = r.run_dir.string();
        d["run_id"] = r.config.run_id;
        d["policy_updates"] = r.policy_updates;
        d["reward_updates"] = r.reward_updates;
        d["final_scaled_reward"] = r.final_scaled_reward;
        d["final_return"] = r.final_return;
        py::list rows;
        for (const auto& mrow : r.metrics) rows.append(metrics_dict(mrow));
        d["metrics"] = rows;
        return d;
      },
      py::arg("text") = "", py::arg("overrides") = py::dict(),
      "Runs train() on `key=value` config text plus keyword overrides.");

  // Self-test and CLI.
  m.def(
      "grad_check",
      [](int nets, std::uint64_t seed) {
        const GradCheckReport r = run_grad_checks(nets, seed);
        py::dict d;
        d["nets_checked"] = r.nets_checked;
        d["max_net_error"] = r.max_net_error;
        d["ae_w_loss_error"] = r.ae_w_loss_error;
        d["ae_js_loss_error"] = r.ae_js_loss_error;
        d["vae_loss_error"] = r.vae_loss_error;
        d["disc_loss_error"] = r.disc_loss_error;
        d["surrogate_error"] = r.surrogate_error;
        d["worst"] = r.worst();
        return d;
      },
      py::arg("nets") = 100, py::arg("seed") = 0);
  m.def(
      "cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "aeail");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        py::gil_scoped_release release;
        return cli(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs the command-line front end and returns its exit code.");
}
