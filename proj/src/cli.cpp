#include "aeail/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

#include "aeail/checkpoint.hpp"
#include "aeail/errors.hpp"
#include "aeail/evaluation.hpp"
#include "aeail/selfcheck.hpp"
#include "aeail/trainer.hpp"

namespace aeail {

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

TrainConfig apply_overrides(TrainConfig c, const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) {
      throw UsageError("unexpected argument '" + a + "'");
    }
    std::string key = a.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key = key.substr(0, eq);
    } else if (i + 1 < args.size()) {
      value = args[++i];
    } else {
      throw UsageError("option --" + key + " needs a value");
    }
    std::replace(key.begin(), key.end(), '-', '_');
    try {
      apply_config_value(c, key, value);
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
  }
  return c;
}

void print_report(const EvalReport& r) {
  std::cout << "env " << to_string(r.env) << "\n"
            << "checkpoint " << r.checkpoint_id << "\n"
            << "n_rollouts " << r.n_rollouts << "\n"
            << "returns";
  for (double v : r.returns) std::cout << ' ' << format_double(v);
  std::cout << "\nmean " << format_double(r.mean) << "\nstd " << format_double(r.std)
            << "\n";
  if (r.expert_return) std::cout << "expert_return " << format_double(*r.expert_return) << "\n";
  if (r.random_return) std::cout << "random_return " << format_double(*r.random_return) << "\n";
  if (r.scaled) std::cout << "scaled_reward " << format_double(*r.scaled) << "\n";
}

Matrix concat_features(const std::vector<Trajectory>& ts, bool absorbing, int horizon) {
  std::vector<Matrix> parts;
  Eigen::Index total = 0;
  for (const auto& t : ts) {
    parts.push_back(absorbing ? asw_augment(t, horizon).features() : t.features());
    total += parts.back().cols();
  }
  Matrix out(parts.empty() ? 0 : parts.front().rows(), total);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p;
    c += p.cols();
  }
  return out;
}

}  // namespace

int cli(int argc, const char* const* argv) {
  CLI::App app{"Adversarial imitation learning with auto-encoder rewards"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  // gen-demos
  std::string env = "pointmass2d";
  int n = 10;
  std::uint64_t seed = 0;
  std::string out;
  int horizon = 0;
  auto* gen = app.add_subcommand("gen-demos", "Roll out the scripted expert into a demo file");
  gen->add_option("--env", env, "pointmass2d, pendulum or cartpole_cont")->required();
  gen->add_option("--n", n, "Number of trajectories")->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "Seed");
  gen->add_option("--out", out, "Output path")->required();
  gen->add_option("--horizon", horizon, "Override the episode horizon");

  // corrupt-demos
  std::string in;
  double sigma = 0.0;
  auto* corrupt = app.add_subcommand("corrupt-demos", "Add Gaussian noise to a demo file");
  corrupt->add_option("--in", in, "Input demo file")->required();
  corrupt->add_option("--sigma", sigma, "Noise standard deviation")->required()
      ->check(CLI::NonNegativeNumber);
  corrupt->add_option("--seed", seed, "Seed");
  corrupt->add_option("--out", out, "Output path")->required();

  // train
  std::string config_path;
  auto* train_cmd = app.add_subcommand(
      "train", "Train a policy; any config key may be overridden with --key=value");
  train_cmd->add_option("--config", config_path, "Config file (key=value lines)");
  train_cmd->allow_extras();

  // sweep
  std::string grid_path;
  int jobs = 0;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train every cell of a grid config");
  sweep_cmd->add_option("--grid", grid_path, "Grid config")->required();
  sweep_cmd->add_option("--jobs", jobs, "Parallel workers (overrides the grid)");

  // eval
  std::string checkpoint;
  std::string save_rollouts;
  auto* eval_cmd = app.add_subcommand("eval", "Deterministic evaluation of a policy checkpoint");
  eval_cmd->add_option("--checkpoint", checkpoint, "Policy checkpoint")->required();
  eval_cmd->add_option("--env", env, "Environment")->required();
  eval_cmd->add_option("--n", n, "Number of rollouts")->check(CLI::PositiveNumber);
  eval_cmd->add_option("--seed", seed, "First rollout seed");
  eval_cmd->add_option("--horizon", horizon, "Override the episode horizon");
  eval_cmd->add_option("--save-rollouts", save_rollouts,
                       "Write the evaluation rollouts as a demo file");

  // dump-latents
  std::string reward_ckpt, demos_path, rollouts_path;
  auto* dump = app.add_subcommand("dump-latents", "Export first-hidden-layer activations");
  dump->add_option("--reward-checkpoint", reward_ckpt, "Reward checkpoint")->required();
  dump->add_option("--demos", demos_path, "Expert demo file")->required();
  dump->add_option("--rollouts", rollouts_path, "Policy rollout file (demo format)")->required();
  dump->add_option("--out", out, "CSV output path")->required();
  dump->add_option("--horizon", horizon, "Horizon for absorbing-state padding");

  // grad-check
  int nets = 100;
  auto* gc = app.add_subcommand("grad-check", "Check analytic gradients against finite differences");
  gc->add_option("--nets", nets, "Random networks to check")->check(CLI::PositiveNumber);
  gc->add_option("--seed", seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) {
      EnvSpec spec = make_env_spec(env);
      if (horizon > 0) spec.horizon = horizon;
      save_demos(out, generate_demos(spec, scripted_expert(spec), n, seed), spec);
      std::cout << "wrote " << n << " trajectories to " << out << "\n";
    } else if (corrupt->parsed()) {
      const DemonstrationSet demos = load_demos(in);
      save_demos(out, corrupt_demos(demos, sigma, seed), make_env_spec(demos.env));
      std::cout << "wrote corrupted demonstrations to " << out << "\n";
    } else if (train_cmd->parsed()) {
      TrainConfig c;
      if (!config_path.empty()) c = load_config(config_path);
      c = apply_overrides(c, train_cmd->remaining());
      try {
        c = resolve_config(c);
      } catch (const ConfigError& e) {
        throw UsageError(e.what());
      }
      const TrainResult r = train(c);
      std::cout << "run " << r.run_dir.string() << "\n";
      if (r.final_scaled_reward) {
        std::cout << "final_scaled_reward " << format_double(*r.final_scaled_reward) << "\n";
      }
    } else if (sweep_cmd->parsed()) {
      SweepGrid grid = load_sweep_grid(grid_path);
      if (jobs > 0) grid.jobs = jobs;
      const SweepResult r = sweep(grid);
      int failed = 0;
      for (const auto& cell : r.cells) {
        if (!cell.ok) {
          ++failed;
          std::cerr << "cell " << cell.config.run_id << " failed: " << cell.error << "\n";
        }
      }
      std::cout << "cells " << r.cells.size() << " failed " << failed << "\n";
      for (const auto& row : r.summary) {
        std::cout << to_string(row.reward) << " h" << row.ae_hidden << " noise "
                  << format_double(row.demo_noise) << ": " << format_double(row.mean)
                  << " +- " << format_double(row.std) << "\n";
      }
      if (failed > 0) return 2;
    } else if (eval_cmd->parsed()) {
      EnvSpec spec = make_env_spec(env);
      if (horizon > 0) spec.horizon = horizon;
      std::ifstream ckpt(checkpoint, std::ios::binary);
      if (!ckpt) throw DataError("cannot read " + checkpoint);
      const MlpNet net = read_net(ckpt);
      const Vector log_std = read_f64_vector(ckpt);
      if (net.input_dim() != spec.state_dim || net.output_dim() != spec.action_dim) {
        throw ShapeError("checkpoint has state/action dimensions " +
                         std::to_string(net.input_dim()) + "/" +
                         std::to_string(net.output_dim()) + " but env " + env + " has " +
                         std::to_string(spec.state_dim) + "/" +
                         std::to_string(spec.action_dim));
      }
      const GaussianPolicy policy(net, log_std, spec.action_low, spec.action_high);
      const EvalReport r = evaluate(policy, spec, n, seed, checkpoint);
      print_report(r);
      if (!save_rollouts.empty()) {
        DemonstrationSet set;
        set.env = spec.name;
        const StatePolicy det = [&](const Vector& s) { return policy.clip(policy.mean(s)); };
        for (int i = 0; i < n; ++i) {
          set.trajectories.push_back(
              rollout(spec, det, seed + static_cast<std::uint64_t>(i)).trajectory);
        }
        set.normalizer = FeatureNormalizer::fit(set.features());
        save_demos(save_rollouts, set, spec);
      }
    } else if (dump->parsed()) {
      const DemonstrationSet demos = load_demos(demos_path);
      const DemonstrationSet rolls = load_demos(rollouts_path);
      EnvSpec spec = make_env_spec(demos.env);
      if (horizon > 0) spec.horizon = horizon;
      std::ifstream is(reward_ckpt, std::ios::binary);
      if (!is) throw DataError("cannot read " + reward_ckpt);
      // Peek at the tag to learn whether the model expects absorbing features.
      const bool absorbing = (is.peek() & 0x80) != 0;
      FeatureNormalizer norm = demos.normalizer;
      if (absorbing) norm = asw_augment_normalizer(norm, spec.state_dim);
      const Matrix expert = concat_features(demos.trajectories, absorbing, spec.horizon);
      const Matrix generated = concat_features(rolls.trajectories, absorbing, spec.horizon);
      RewardModelConfig defaults;
      defaults.horizon = spec.horizon;
      const auto model = read_reward_model(is, defaults, expert, norm);
      if (model->input_dim() != expert.rows()) {
        throw ShapeError("reward checkpoint expects " + std::to_string(model->input_dim()) +
                         " features, demonstrations have " + std::to_string(expert.rows()));
      }
      dump_latents(*model, expert, generated, std::filesystem::path(out));
      std::cout << "wrote " << expert.cols() + generated.cols() << " rows to " << out << "\n";
    } else if (gc->parsed()) {
      const GradCheckReport r = run_grad_checks(nets, seed);
      std::cout << "nets " << r.nets_checked << " max_rel_error "
                << format_double(r.max_net_error) << "\n"
                << "ae_w_loss " << format_double(r.ae_w_loss_error) << "\n"
                << "ae_js_loss " << format_double(r.ae_js_loss_error) << "\n"
                << "vae_loss " << format_double(r.vae_loss_error) << "\n"
                << "disc_loss " << format_double(r.disc_loss_error) << "\n"
                << "surrogate " << format_double(r.surrogate_error) << "\n";
      if (!(r.worst() <= 1e-4)) {
        std::cerr << "gradient check failed: worst relative error "
                  << format_double(r.worst()) << "\n";
        return 2;
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace aeail
