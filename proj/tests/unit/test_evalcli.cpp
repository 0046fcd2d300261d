#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "aeail/cli.hpp"
#include "aeail/errors.hpp"
#include "aeail/evaluation.hpp"

using namespace aeail;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("aeail_evalcli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

CliRun run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "aeail");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  CliRun r;
  r.code = cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

}  // namespace

TEST_CASE("scaled_reward: examples, affine invariance and degenerate references") {
  CHECK(scaled_reward(100.0, 0.0, 100.0) == 1.0);
  CHECK(scaled_reward(0.0, 0.0, 100.0) == 0.0);
  CHECK(scaled_reward(50.0, 0.0, 100.0) == 0.5);
  CHECK(scaled_reward(-50.0, 0.0, 100.0) == -0.5);
  CHECK(scaled_reward(150.0, 0.0, 100.0) == 1.5);
  for (double a : {0.01, 1.0, 7.5, 1e3}) {
    for (double b : {-300.0, 0.0, 42.0}) {
      const double x = scaled_reward(a * -12.0 + b, a * -40.0 + b, a * -3.0 + b);
      CHECK(std::abs(x - scaled_reward(-12.0, -40.0, -3.0)) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(scaled_reward(1.0, 2.0, 2.0), ConfigError);
}

TEST_CASE("relative_improvement: quoted figures") {
  CHECK(std::abs(relative_improvement(0.921, 0.83) - 0.1096) <= 5e-3);
  CHECK(std::abs(relative_improvement(0.813, 0.539) - 0.508) <= 5e-3);
  CHECK(std::abs(relative_improvement(0.921, 0.83) - 0.091 / 0.83) <= 1e-12);
  CHECK(relative_improvement(0.5, 0.5) == 0.0);
  CHECK_THROWS_AS(relative_improvement(1.0, 0.0), ConfigError);
}

TEST_CASE("evaluate: returns match a hand-stepped 5-step rollout") {
  EnvSpec spec = make_env_spec("pointmass2d");
  spec.horizon = 5;
  const GaussianPolicy policy(4, 2, spec.action_low, spec.action_high, 11, 8);
  const EvalReport r = evaluate(policy, spec, 3, 20, "ckpt", false);
  REQUIRE(r.returns.size() == 3);
  for (int i = 0; i < 3; ++i) {
    Vector s = env_reset(spec, 20 + static_cast<std::uint64_t>(i));
    double ret = 0.0;
    for (int t = 0; t < 5; ++t) {
      const Vector mu = policy.mean(s);
      double a[2];
      for (int k = 0; k < 2; ++k) {
        a[k] = std::clamp(mu[k], spec.action_low[k], spec.action_high[k]);
      }
      ret -= s[0] * s[0] + s[1] * s[1] + 0.01 * (a[0] * a[0] + a[1] * a[1]);
      Vector next(4);
      for (int k = 0; k < 2; ++k) {
        next[k] = s[k] + s[k + 2] * 0.05 + 0.5 * a[k] * 0.05 * 0.05;
        next[k + 2] = s[k + 2] + a[k] * 0.05;
      }
      s = next;
    }
    CHECK(std::abs(r.returns[static_cast<std::size_t>(i)] - ret) <= 1e-12 * (1.0 + std::abs(ret)));
  }
  const double mean = (r.returns[0] + r.returns[1] + r.returns[2]) / 3.0;
  CHECK(std::abs(r.mean - mean) <= 1e-12 * (1.0 + std::abs(mean)));
  CHECK(r.checkpoint_id == "ckpt");
  CHECK(r.n_rollouts == 3);
  CHECK_FALSE(r.scaled.has_value());
}

TEST_CASE("evaluate: identical seeds give zero spread, references give a scale") {
  const EnvSpec spec = make_env_spec("pointmass2d");
  const GaussianPolicy policy(4, 2, spec.action_low, spec.action_high, 3, 8);
  std::vector<double> repeats;
  for (int k = 0; k < 4; ++k) repeats.push_back(evaluate(policy, spec, 1, 5, {}, false).mean);
  CHECK(std::all_of(repeats.begin(), repeats.end(),
                    [&](double v) { return v == repeats[0]; }));

  const EvalReport r = evaluate(policy, spec);
  CHECK(r.n_rollouts == 10);
  REQUIRE(r.scaled.has_value());
  CHECK(*r.scaled == scaled_reward(r.mean, *r.random_return, *r.expert_return));
  const ReferenceReturns refs = reference_returns(spec);
  CHECK(refs.expert > refs.random);

  CHECK_THROWS_AS(evaluate(policy, spec, 0), ConfigError);
  const EnvSpec pendulum = make_env_spec("pendulum");
  CHECK_THROWS_AS(evaluate(policy, pendulum, 1), ShapeError);
}

TEST_CASE("dump_latents: one row per input, width and bit-exact values") {
  EnvSpec spec = make_env_spec("pointmass2d");
  spec.horizon = 15;
  const DemonstrationSet demos = generate_demos(spec, scripted_expert(spec), 2, 0);
  const Matrix expert = demos.features();
  Matrix generated = Matrix::Random(6, 7);
  RewardModelConfig rc;
  rc.seed = 4;
  const auto model = make_reward_model(rc, expert, demos.normalizer);
  std::ostringstream os;
  dump_latents(*model, expert, generated, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  CHECK(line.rfind("source,h0,h1,", 0) == 0);
  CHECK(std::count(line.begin(), line.end(), ',') == 100);
  const Matrix le = model->latent_activations(expert);
  const Matrix lg = model->latent_activations(generated);
  int rows = 0;
  while (std::getline(is, line)) {
    std::istringstream fields(line);
    std::string label;
    std::getline(fields, label, ',');
    const bool is_expert = rows < expert.cols();
    CHECK(label == (is_expert ? "expert" : "generated"));
    const Eigen::Index col = is_expert ? rows : rows - expert.cols();
    std::string v;
    for (Eigen::Index j = 0; std::getline(fields, v, ','); ++j) {
      CHECK(std::stod(v) == (is_expert ? le(j, col) : lg(j, col)));
    }
    ++rows;
  }
  CHECK(rows == expert.cols() + generated.cols());

  RewardModelConfig got;
  got.variant = RewardVariant::kGot;
  const auto got_model = make_reward_model(got, expert, demos.normalizer);
  CHECK_THROWS(dump_latents(*got_model, expert, generated, os));
}

TEST_CASE("cli: subcommands and exit codes") {
  const fs::path dir = scratch_dir("cli");
  const std::string demos = (dir / "d.jsonl").string();

  CliRun r = run_cli({"gen-demos", "--env", "pointmass2d", "--n", "10", "--seed", "0",
                      "--out", demos});
  CHECK(r.code == 0);
  CHECK(load_demos(demos).trajectories.size() == 10);

  r = run_cli({"corrupt-demos", "--in", demos, "--sigma", "0.3", "--seed", "1", "--out",
               (dir / "n.jsonl").string()});
  CHECK(r.code == 0);
  CHECK(load_demos(dir / "n.jsonl").trajectories.size() == 10);

  {
    std::ofstream cfg(dir / "c.cfg");
    cfg << "horizon = 20\nbc_iters = 0\nn_demos = 2\nbatch_size = 64\n"
        << "output_dir = " << dir.string() << "\nrun_id = r0\n";
  }
  r = run_cli({"train", "--config", (dir / "c.cfg").string(), "--reward", "ae_w", "--iters",
               "0"});
  CHECK(r.code == 0);
  const fs::path ckpt = dir / "r0" / "policy.ckpt";
  CHECK(fs::exists(ckpt));

  r = run_cli({"eval", "--checkpoint", ckpt.string(), "--env", "pointmass2d", "--n", "2",
               "--horizon", "20"});
  CHECK(r.code == 0);
  CHECK(r.out.find("scaled_reward ") != std::string::npos);

  r = run_cli({"eval", "--checkpoint", ckpt.string(), "--env", "pendulum"});
  CHECK(r.code == 2);
  CHECK(r.err.find("4/2") != std::string::npos);
  CHECK(r.err.find("2/1") != std::string::npos);

  r = run_cli({"eval", "--checkpoint", (dir / "missing.ckpt").string(), "--env",
               "pointmass2d"});
  CHECK(r.code == 2);

  r = run_cli({"gen-demos", "--env", "pointmass2d", "--bogus", "1", "--out", demos});
  CHECK(r.code == 1);
  CHECK_FALSE(r.err.empty());
  CHECK(run_cli({"frobnicate"}).code == 1);
  CHECK(run_cli({}).code == 1);
  CHECK(run_cli({"train", "--not_a_key", "3"}).code == 1);
  CHECK(run_cli({"train", "--batch_size", "0"}).code == 1);
  CHECK(run_cli({"eval", "--help"}).code == 0);
}

TEST_CASE("cli: eval rollouts feed dump-latents") {
  const fs::path dir = scratch_dir("latents");
  const std::string demos = (dir / "d.jsonl").string();
  REQUIRE(run_cli({"gen-demos", "--env", "pointmass2d", "--n", "2", "--horizon", "10",
                   "--out", demos}).code == 0);
  {
    std::ofstream cfg(dir / "c.cfg");
    cfg << "horizon = 10\nbc_iters = 0\nbatch_size = 32\niterations = 0\n"
        << "demo_path = " << demos << "\noutput_dir = " << dir.string() << "\nrun_id = r\n";
  }
  REQUIRE(run_cli({"train", "--config", (dir / "c.cfg").string()}).code == 0);
  const std::string rolls = (dir / "rolls.jsonl").string();
  REQUIRE(run_cli({"eval", "--checkpoint", (dir / "r" / "policy.ckpt").string(), "--env",
                   "pointmass2d", "--n", "3", "--horizon", "10", "--save-rollouts", rolls})
              .code == 0);
  const fs::path csv = dir / "latents.csv";
  const CliRun r = run_cli({"dump-latents", "--reward-checkpoint",
                            (dir / "r" / "reward.ckpt").string(), "--demos", demos,
                            "--rollouts", rolls, "--out", csv.string()});
  CHECK(r.code == 0);
  const std::string text = slurp(csv);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 20 + 30);

  CHECK(run_cli({"grad-check", "--nets", "5"}).code == 0);
}
