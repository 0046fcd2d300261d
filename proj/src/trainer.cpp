#include "aeail/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "aeail/checkpoint.hpp"
#include "aeail/errors.hpp"
#include "aeail/evaluation.hpp"

namespace aeail {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string bad_value(std::string_view key, std::string_view value,
                      std::string_view expected) {
  return "config key '" + std::string(key) + "': cannot parse '" +
         std::string(value) + "' as " + std::string(expected);
}

long long parse_int(std::string_view key, std::string_view value) {
  long long v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(bad_value(key, value, "an integer"));
  }
  return v;
}

std::uint64_t parse_u64(std::string_view key, std::string_view value) {
  std::uint64_t v = 0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(bad_value(key, value, "a non-negative integer"));
  }
  return v;
}

int parse_int32(std::string_view key, std::string_view value) {
  const long long v = parse_int(key, value);
  if (v < -2147483647LL || v > 2147483647LL) {
    throw ConfigError(bad_value(key, value, "a 32-bit integer"));
  }
  return static_cast<int>(v);
}

double parse_double(std::string_view key, std::string_view value) {
  double v = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ConfigError(bad_value(key, value, "a finite number"));
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(bad_value(key, value, "a boolean"));
}

std::vector<std::string> split_list(std::string_view value) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = value.find(',', start);
    out.push_back(trim(value.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (const auto& s : out) {
    if (s.empty()) throw ConfigError("empty entry in list '" + std::string(value) + "'");
  }
  return out;
}

// Splits "key = value" lines; calls f(key, value, line_no).
template <typename F>
void for_each_pair(std::string_view text, F f) {
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos
                                                 ? std::string_view::npos
                                                 : nl - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    const std::string stripped = trim(line);
    if (!stripped.empty()) {
      const auto eq = stripped.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected key=value");
      }
      const std::string key = trim(std::string_view(stripped).substr(0, eq));
      const std::string value = trim(std::string_view(stripped).substr(eq + 1));
      if (key.empty()) {
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      }
      f(key, value, line_no);
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string short_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

std::string opt_field(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

}  // namespace

int default_iterations(std::string_view env) {
  switch (env_name_from_string(env)) {
    case EnvName::kPointMass2d:
      return 300;
    case EnvName::kPendulum:
      return 500;
    case EnvName::kCartPoleCont:
      return 200;
  }
  return 300;
}

int default_bc_iters(std::string_view env) {
  (void)env_name_from_string(env);
  return 10000;
}

void apply_config_value(TrainConfig& c, std::string_view key,
                        std::string_view value) {
  const std::string v = trim(value);
  if (key == "env") {
    (void)env_name_from_string(v);
    c.env = v;
  } else if (key == "reward") {
    c.reward = reward_variant_from_string(v);
  } else if (key == "asw") {
    c.asw = parse_bool(key, v);
  } else if (key == "demo_path") {
    c.demo_path = v;
  } else if (key == "n_demos") {
    c.n_demos = parse_int32(key, v);
  } else if (key == "demo_noise") {
    c.demo_noise = parse_double(key, v);
  } else if (key == "demo_seed") {
    c.demo_seed = parse_u64(key, v);
  } else if (key == "iterations" || key == "iters") {
    c.iterations = parse_int32(key, v);
  } else if (key == "batch_size") {
    c.batch_size = parse_int32(key, v);
  } else if (key == "horizon") {
    c.horizon = parse_int32(key, v);
  } else if (key == "gamma") {
    c.gamma = parse_double(key, v);
  } else if (key == "lambda") {
    c.lambda = parse_double(key, v);
  } else if (key == "max_kl") {
    c.max_kl = parse_double(key, v);
  } else if (key == "cg_iters") {
    c.cg_iters = parse_int32(key, v);
  } else if (key == "cg_damping") {
    c.cg_damping = parse_double(key, v);
  } else if (key == "backtrack_ratio") {
    c.backtrack_ratio = parse_double(key, v);
  } else if (key == "max_backtracks") {
    c.max_backtracks = parse_int32(key, v);
  } else if (key == "learn_log_std") {
    c.learn_log_std = parse_bool(key, v);
  } else if (key == "reward_lr") {
    c.reward_lr = parse_double(key, v);
  } else if (key == "clip") {
    c.clip = parse_double(key, v);
  } else if (key == "ae_hidden") {
    c.ae_hidden = parse_int32(key, v);
  } else if (key == "vae_latent") {
    c.vae_latent = parse_int32(key, v);
  } else if (key == "got_alpha") {
    c.got_alpha = parse_double(key, v);
  } else if (key == "got_beta") {
    c.got_beta = parse_double(key, v);
  } else if (key == "policy_hidden") {
    c.policy_hidden = parse_int32(key, v);
  } else if (key == "critic_updates") {
    c.critic_updates = parse_int32(key, v);
  } else if (key == "critic_lr") {
    c.critic_lr = parse_double(key, v);
  } else if (key == "policy_updates") {
    c.policy_updates = parse_int32(key, v);
  } else if (key == "bc_iters") {
    c.bc_iters = parse_int32(key, v);
  } else if (key == "bc_lr") {
    c.bc_lr = parse_double(key, v);
  } else if (key == "seed") {
    c.seed = parse_u64(key, v);
  } else if (key == "eval_every") {
    c.eval_every = parse_int32(key, v);
  } else if (key == "eval_rollouts") {
    c.eval_rollouts = parse_int32(key, v);
  } else if (key == "eval_seed") {
    c.eval_seed = parse_u64(key, v);
  } else if (key == "output_dir") {
    c.output_dir = v;
  } else if (key == "run_id") {
    c.run_id = v;
  } else if (key == "poison_true_reward") {
    c.poison_true_reward = parse_bool(key, v);
  } else {
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  for_each_pair(text, [&](const std::string& k, const std::string& v, int line) {
    try {
      apply_config_value(base, k, v);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line) + ": " + e.what());
    }
  });
  return base;
}

TrainConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_text(path));
}

std::string default_run_id(const TrainConfig& c) {
  std::string id = c.env + "_" + std::string(to_string(c.reward));
  if (c.asw) id += "_asw";
  id += "_h" + std::to_string(c.ae_hidden) + "_n" + short_double(c.demo_noise) +
        "_s" + std::to_string(c.seed);
  return id;
}

TrainConfig resolve_config(TrainConfig c) {
  (void)env_name_from_string(c.env);
  if (!c.iterations) c.iterations = default_iterations(c.env);
  if (!c.bc_iters) c.bc_iters = default_bc_iters(c.env);
  if (!c.horizon) c.horizon = make_env_spec(c.env).horizon;
  if (!c.demo_seed) c.demo_seed = c.seed;
  if (c.run_id.empty()) c.run_id = default_run_id(c);

  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(*c.iterations >= 0, "iterations must be >= 0");
  require(c.batch_size >= 1, "batch_size must be >= 1");
  require(*c.horizon >= 1, "horizon must be >= 1");
  require(c.n_demos >= 1, "n_demos must be >= 1");
  require(c.demo_noise >= 0.0, "demo_noise must be >= 0");
  require(c.gamma >= 0.0 && c.gamma <= 1.0, "gamma must lie in [0, 1]");
  require(c.lambda >= 0.0 && c.lambda <= 1.0, "lambda must lie in [0, 1]");
  require(c.max_kl > 0.0, "max_kl must be > 0");
  require(c.cg_iters >= 1, "cg_iters must be >= 1");
  require(c.cg_damping >= 0.0, "cg_damping must be >= 0");
  require(c.backtrack_ratio > 0.0 && c.backtrack_ratio < 1.0,
          "backtrack_ratio must lie in (0, 1)");
  require(c.max_backtracks >= 0, "max_backtracks must be >= 0");
  require(c.reward_lr > 0.0, "reward_lr must be > 0");
  require(c.clip > 0.0, "clip must be > 0");
  require(c.ae_hidden >= 1, "ae_hidden must be >= 1");
  require(c.vae_latent >= 1, "vae_latent must be >= 1");
  require(c.got_alpha > 0.0 && c.got_beta > 0.0, "got_alpha and got_beta must be > 0");
  require(c.policy_hidden >= 1, "policy_hidden must be >= 1");
  require(c.critic_updates >= 0, "critic_updates must be >= 0");
  require(c.critic_lr > 0.0, "critic_lr must be > 0");
  require(c.policy_updates >= 0, "policy_updates must be >= 0");
  require(*c.bc_iters >= 0, "bc_iters must be >= 0");
  require(c.bc_lr > 0.0, "bc_lr must be > 0");
  require(c.eval_every >= 0, "eval_every must be >= 0");
  require(c.eval_rollouts >= 1, "eval_rollouts must be >= 1");
  require(!c.output_dir.empty(), "output_dir must not be empty");
  require(c.run_id.find('/') == std::string::npos && c.run_id != "." &&
              c.run_id != "..",
          "run_id must be a plain directory name");
  return c;
}

std::string config_to_text(const TrainConfig& c) {
  std::ostringstream os;
  const auto kv = [&](const char* k, const std::string& v) {
    os << k << " = " << v << '\n';
  };
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  kv("env", c.env);
  kv("reward", std::string(to_string(c.reward)));
  kv("asw", b(c.asw));
  if (!c.demo_path.empty()) kv("demo_path", c.demo_path);
  kv("n_demos", std::to_string(c.n_demos));
  kv("demo_noise", format_double(c.demo_noise));
  if (c.demo_seed) kv("demo_seed", std::to_string(*c.demo_seed));
  if (c.iterations) kv("iterations", std::to_string(*c.iterations));
  kv("batch_size", std::to_string(c.batch_size));
  if (c.horizon) kv("horizon", std::to_string(*c.horizon));
  kv("gamma", format_double(c.gamma));
  kv("lambda", format_double(c.lambda));
  kv("max_kl", format_double(c.max_kl));
  kv("cg_iters", std::to_string(c.cg_iters));
  kv("cg_damping", format_double(c.cg_damping));
  kv("backtrack_ratio", format_double(c.backtrack_ratio));
  kv("max_backtracks", std::to_string(c.max_backtracks));
  kv("learn_log_std", b(c.learn_log_std));
  kv("reward_lr", format_double(c.reward_lr));
  kv("clip", format_double(c.clip));
  kv("ae_hidden", std::to_string(c.ae_hidden));
  kv("vae_latent", std::to_string(c.vae_latent));
  kv("got_alpha", format_double(c.got_alpha));
  kv("got_beta", format_double(c.got_beta));
  kv("policy_hidden", std::to_string(c.policy_hidden));
  kv("critic_updates", std::to_string(c.critic_updates));
  kv("critic_lr", format_double(c.critic_lr));
  kv("policy_updates", std::to_string(c.policy_updates));
  if (c.bc_iters) kv("bc_iters", std::to_string(*c.bc_iters));
  kv("bc_lr", format_double(c.bc_lr));
  kv("seed", std::to_string(c.seed));
  kv("eval_every", std::to_string(c.eval_every));
  kv("eval_rollouts", std::to_string(c.eval_rollouts));
  kv("eval_seed", std::to_string(c.eval_seed));
  kv("output_dir", c.output_dir);
  if (!c.run_id.empty()) kv("run_id", c.run_id);
  if (c.poison_true_reward) kv("poison_true_reward", "true");
  return os.str();
}

EnvSpec training_env_spec(const TrainConfig& c) {
  EnvSpec spec = make_env_spec(c.env);
  if (c.horizon) spec.horizon = *c.horizon;
  spec.poison_true_reward = c.poison_true_reward;
  return spec;
}

DemonstrationSet prepare_demos(const TrainConfig& c, const EnvSpec& spec) {
  const std::uint64_t demo_seed = c.demo_seed.value_or(c.seed);
  DemonstrationSet demos;
  if (!c.demo_path.empty()) {
    demos = load_demos(c.demo_path);
    if (demos.env != spec.name) {
      throw DataError("demonstrations are for " +
                      std::string(to_string(demos.env)) + ", config trains " +
                      c.env);
    }
  } else {
    EnvSpec clean = spec;
    clean.poison_true_reward = false;
    demos = generate_demos(clean, scripted_expert(clean), c.n_demos, demo_seed);
  }
  if (demos.trajectories.empty() || demos.pair_count() == 0) {
    throw DataError("demonstration set is empty");
  }
  if (c.demo_noise > 0.0) {
    demos = corrupt_demos(demos, c.demo_noise, derive_seed(demo_seed, 8));
  }
  return demos;
}

RolloutBatch collect_rollouts(const EnvSpec& spec, const GaussianPolicy& policy,
                              Eigen::Index min_pairs, RandomStream& stream,
                              std::uint64_t env_seed,
                              std::uint64_t* episode_counter) {
  RolloutBatch batch;
  Eigen::Index total = 0;
  std::vector<Vector> states, clipped, raw;
  while (total < min_pairs) {
    states.clear();
    clipped.clear();
    raw.clear();
    Trajectory traj;
    Vector s = env_reset(spec, derive_seed(env_seed, (*episode_counter)++));
    for (int t = 0; t < spec.horizon; ++t) {
      SampledAction a = sample_action(policy, s, ActMode::kStochastic, stream);
      Transition tr = env_step(spec, s, a.clipped);
      states.push_back(s);
      clipped.push_back(std::move(a.clipped));
      raw.push_back(std::move(a.raw));
      traj.dones.push_back(tr.done);
      s = std::move(tr.s_next);
      if (tr.done) break;
    }
    const auto n = static_cast<Eigen::Index>(states.size());
    traj.states.resize(spec.state_dim, n);
    traj.actions.resize(spec.action_dim, n);
    Matrix raw_m(spec.action_dim, n);
    for (Eigen::Index t = 0; t < n; ++t) {
      traj.states.col(t) = states[static_cast<std::size_t>(t)];
      traj.actions.col(t) = clipped[static_cast<std::size_t>(t)];
      raw_m.col(t) = raw[static_cast<std::size_t>(t)];
    }
    traj.final_state = s;
    batch.log_probs.push_back(log_prob_batch(policy, traj.states, raw_m));
    batch.raw_actions.push_back(std::move(raw_m));
    batch.trajectories.push_back(std::move(traj));
    total += n;
  }
  return batch;
}

EqualBatches sample_equal_batches(const Matrix& generated, const Matrix& expert,
                                  Eigen::Index batch_size, Rng& rng) {
  if (expert.cols() == 0) throw DataError("expert demonstration set is empty");
  if (generated.cols() == 0) throw DataError("generated batch is empty");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const auto draw = [&](const Matrix& src) {
    Matrix out(src.rows(), batch_size);
    const auto n = static_cast<std::size_t>(src.cols());
    const auto b = static_cast<std::size_t>(batch_size);
    if (n >= b) {
      std::vector<Eigen::Index> idx(n);
      for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<Eigen::Index>(i);
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t j = i + uniform_index(rng, n - i);
        std::swap(idx[i], idx[j]);
        out.col(static_cast<Eigen::Index>(i)) = src.col(idx[i]);
      }
    } else {
      for (std::size_t i = 0; i < b; ++i) {
        out.col(static_cast<Eigen::Index>(i)) =
            src.col(static_cast<Eigen::Index>(uniform_index(rng, n)));
      }
    }
    return out;
  };
  EqualBatches out;
  out.generated = draw(generated);
  out.expert = draw(expert);
  return out;
}

namespace {

// Returns the mean over all (augmented) steps of the unfolded rewards.
double fill_rewards_impl(RolloutBatch& batch, RewardModel& model, bool asw,
                         int horizon, double gamma) {
  batch.rewards.assign(batch.trajectories.size(), Vector());
  double sum = 0.0;
  Eigen::Index count = 0;
  for (std::size_t i = 0; i < batch.trajectories.size(); ++i) {
    const Trajectory& t = batch.trajectories[i];
    if (!asw) {
      batch.rewards[i] = model.episode_rewards(t.features());
      sum += batch.rewards[i].sum();
      count += batch.rewards[i].size();
      continue;
    }
    const Vector r = model.episode_rewards(asw_augment(t, horizon).features());
    sum += r.sum();
    count += r.size();
    const Eigen::Index live = t.length();
    Vector folded = r.head(live);
    double tail = 0.0;
    for (Eigen::Index k = r.size() - 1; k >= live; --k) tail = r[k] + gamma * tail;
    if (live > 0) folded[live - 1] += gamma * tail;
    batch.rewards[i] = std::move(folded);
  }
  return count > 0 ? sum / static_cast<double>(count) : 0.0;
}

Matrix model_features(const std::vector<Trajectory>& ts, bool asw, int horizon) {
  std::vector<Matrix> parts;
  Eigen::Index total = 0;
  for (const auto& t : ts) {
    parts.push_back(asw ? asw_augment(t, horizon).features() : t.features());
    total += parts.back().cols();
  }
  if (parts.empty()) return Matrix();
  Matrix out(parts.front().rows(), total);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p;
    c += p.cols();
  }
  return out;
}

void write_checkpoints(const std::filesystem::path& dir,
                       const GaussianPolicy& policy, const ValueCritic& critic,
                       const RewardModel& reward) {
  save_policy(dir / "policy.ckpt", policy);
  save_net(dir / "critic.ckpt", critic.net());
  save_reward_model(dir / "reward.ckpt", reward);
}

}  // namespace

void fill_pseudo_rewards(RolloutBatch& batch, RewardModel& model, bool asw,
                         int horizon, double gamma) {
  fill_rewards_impl(batch, model, asw, horizon, gamma);
}

std::string metrics_row(const IterationMetrics& m) {
  std::string row = std::to_string(m.iteration);
  for (double v : {m.reward_loss, m.expert_pseudo_reward,
                   m.generated_pseudo_reward, m.surrogate_gain, m.mean_kl}) {
    row += ',' + format_double(v);
  }
  row += ',' + std::to_string(m.accepted_steps);
  row += ',' + opt_field(m.eval_return_mean);
  row += ',' + opt_field(m.eval_return_std);
  row += ',' + opt_field(m.scaled_reward);
  return row;
}

TrainResult train(const TrainConfig& raw_config) {
  using Clock = std::chrono::steady_clock;
  const TrainConfig c = resolve_config(raw_config);
  const EnvSpec spec = training_env_spec(c);
  EnvSpec eval_spec = spec;
  eval_spec.poison_true_reward = false;
  const int horizon = spec.horizon;

  const DemonstrationSet demos = prepare_demos(c, spec);
  std::vector<Trajectory> expert_trajs = demos.trajectories;
  FeatureNormalizer normalizer = demos.normalizer;
  if (c.asw) normalizer = asw_augment_normalizer(normalizer, spec.state_dim);
  const Matrix expert_features = model_features(expert_trajs, c.asw, horizon);

  RewardModelConfig rc;
  rc.variant = c.reward;
  rc.absorbing = c.asw;
  rc.hidden = c.ae_hidden;
  rc.vae_latent = c.vae_latent;
  rc.clip = ClipRange{-c.clip, c.clip};
  rc.learning_rate = c.reward_lr;
  rc.seed = derive_seed(c.seed, 6);
  rc.horizon = horizon;
  rc.got_alpha = c.got_alpha;
  rc.got_beta = c.got_beta;
  std::unique_ptr<RewardModel> reward = make_reward_model(rc, expert_features, normalizer);

  GaussianPolicy policy(spec.state_dim, spec.action_dim, spec.action_low,
                        spec.action_high, derive_seed(c.seed, 1), c.policy_hidden);
  ValueCritic critic(spec.state_dim, derive_seed(c.seed, 2));

  if (*c.bc_iters > 0) {
    Matrix s(spec.state_dim, demos.pair_count());
    Matrix a(spec.action_dim, demos.pair_count());
    Eigen::Index col = 0;
    for (const auto& t : demos.trajectories) {
      s.middleCols(col, t.length()) = t.states;
      a.middleCols(col, t.length()) = t.actions;
      col += t.length();
    }
    BcOptions bc;
    bc.iters = *c.bc_iters;
    bc.learning_rate = c.bc_lr;
    bc.seed = derive_seed(c.seed, 7);
    bc_pretrain(policy, s, a, bc);
  }

  TrainResult result;
  result.config = c;
  result.run_dir = std::filesystem::path(c.output_dir) / c.run_id;
  std::filesystem::create_directories(result.run_dir);
  {
    std::ofstream cfg(result.run_dir / "config.cfg", std::ios::binary | std::ios::trunc);
    cfg << config_to_text(c);
  }
  std::ofstream metrics(result.run_dir / "metrics.csv", std::ios::binary | std::ios::trunc);
  std::ofstream timing(result.run_dir / "timing.csv", std::ios::binary | std::ios::trunc);
  if (!metrics || !timing) {
    throw DataError("cannot write metrics under " + result.run_dir.string());
  }
  metrics << kMetricsHeader << '\n';
  timing << "iteration,seconds\n";
  metrics.flush();

  RandomStream stream(derive_seed(c.seed, 4));
  Rng batch_rng(derive_seed(c.seed, 5));
  const std::uint64_t env_seed = derive_seed(c.seed, 3);
  std::uint64_t episodes = 0;
  TrustRegionOptions tro;
  tro.max_kl = c.max_kl;
  tro.cg_iters = c.cg_iters;
  tro.damping = c.cg_damping;
  tro.backtrack_ratio = c.backtrack_ratio;
  tro.max_backtracks = c.max_backtracks;
  tro.learn_log_std = c.learn_log_std;

  const bool clipped_variant = is_autoencoder_variant(c.reward);
  for (int it = 0; it < *c.iterations; ++it) {
    const auto t0 = Clock::now();
    IterationMetrics m;
    m.iteration = it;
    try {
      RolloutBatch batch =
          collect_rollouts(spec, policy, c.batch_size, stream, env_seed, &episodes);
      const Matrix gen_features = model_features(batch.trajectories, c.asw, horizon);
      const EqualBatches eb =
          sample_equal_batches(gen_features, expert_features, c.batch_size, batch_rng);

      m.reward_loss = reward->update(eb.expert, eb.generated);
      ++result.reward_updates;
      if (!std::isfinite(m.reward_loss)) throw NumericFault("reward loss is not finite");
      const double max_param = reward->max_abs_parameter();
      result.max_reward_parameter = std::max(result.max_reward_parameter, max_param);
      if (clipped_variant && max_param > c.clip) {
        throw NumericFault("reward parameters escaped the clip range");
      }

      m.generated_pseudo_reward = fill_rewards_impl(batch, *reward, c.asw, horizon, c.gamma);
      if (c.reward == RewardVariant::kGot) {
        double sum = 0.0;
        Eigen::Index n = 0;
        for (const auto& t : expert_trajs) {
          const Vector r = reward->episode_rewards(
              c.asw ? asw_augment(t, horizon).features() : t.features());
          sum += r.sum();
          n += r.size();
        }
        m.expert_pseudo_reward = sum / static_cast<double>(n);
      } else {
        m.expert_pseudo_reward = reward->episode_rewards(eb.expert).mean();
      }

      gae_advantages(batch, critic, c.gamma, c.lambda);
      critic_update(critic, batch.states(), batch.flat_value_targets(),
                    c.critic_updates, c.critic_lr);
      const PolicyBatch pb = make_policy_batch(batch);
      double kl_sum = 0.0;
      for (int k = 0; k < c.policy_updates; ++k) {
        const TrustRegionResult tr = trust_region_step(policy, pb, tro);
        ++result.policy_updates;
        m.surrogate_gain += tr.surrogate_after - tr.surrogate_before;
        kl_sum += tr.kl;
        if (tr.accepted) ++m.accepted_steps;
      }
      m.mean_kl = c.policy_updates > 0 ? kl_sum / c.policy_updates : 0.0;

      const bool last = it + 1 == *c.iterations;
      if (c.eval_every > 0 && ((it + 1) % c.eval_every == 0 || last)) {
        const EvalReport rep =
            evaluate(policy, eval_spec, c.eval_rollouts, c.eval_seed, c.run_id);
        m.eval_return_mean = rep.mean;
        m.eval_return_std = rep.std;
        m.scaled_reward = rep.scaled;
        result.final_return = rep.mean;
        result.final_scaled_reward = rep.scaled;
        write_checkpoints(result.run_dir, policy, critic, *reward);
      }
    } catch (const NumericFault& e) {
      throw NumericFault("numeric fault at iteration " + std::to_string(it) +
                         ": " + e.what());
    }
    m.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    metrics << metrics_row(m) << '\n';
    metrics.flush();
    timing << it << ',' << format_double(m.seconds) << '\n';
    result.metrics.push_back(m);
  }
  write_checkpoints(result.run_dir, policy, critic, *reward);
  return result;
}

// ---------------------------------------------------------------------------
// Sweeps

SweepGrid parse_sweep_grid(std::string_view text) {
  SweepGrid g;
  for_each_pair(text, [&](const std::string& k, const std::string& v, int line) {
    try {
      if (k == "reward") {
        for (const auto& s : split_list(v)) g.rewards.push_back(reward_variant_from_string(s));
      } else if (k == "ae_hidden") {
        for (const auto& s : split_list(v)) g.ae_hidden.push_back(parse_int32(k, s));
      } else if (k == "demo_noise") {
        for (const auto& s : split_list(v)) g.demo_noise.push_back(parse_double(k, s));
      } else if (k == "seed") {
        for (const auto& s : split_list(v)) g.seeds.push_back(parse_u64(k, s));
      } else if (k == "jobs") {
        g.jobs = parse_int32(k, v);
      } else if (k == "run_id") {
        throw ConfigError("run_id is derived per cell in a sweep");
      } else {
        apply_config_value(g.base, k, v);
      }
    } catch (const ConfigError& e) {
      throw ConfigError("grid line " + std::to_string(line) + ": " + e.what());
    }
  });
  if (g.rewards.empty()) g.rewards.push_back(g.base.reward);
  if (g.ae_hidden.empty()) g.ae_hidden.push_back(g.base.ae_hidden);
  if (g.demo_noise.empty()) g.demo_noise.push_back(g.base.demo_noise);
  if (g.seeds.empty()) g.seeds.push_back(g.base.seed);
  if (g.jobs < 1) throw ConfigError("jobs must be >= 1");
  return g;
}

SweepGrid load_sweep_grid(const std::filesystem::path& path) {
  return parse_sweep_grid(read_text(path));
}

std::vector<TrainConfig> sweep_cells(const SweepGrid& g) {
  std::vector<TrainConfig> cells;
  for (RewardVariant r : g.rewards) {
    for (int h : g.ae_hidden) {
      for (double n : g.demo_noise) {
        for (std::uint64_t s : g.seeds) {
          TrainConfig c = g.base;
          c.reward = r;
          c.ae_hidden = h;
          c.demo_noise = n;
          c.seed = s;
          c.run_id.clear();
          cells.push_back(resolve_config(c));
        }
      }
    }
  }
  return cells;
}

SweepResult sweep(const SweepGrid& grid) {
  const std::vector<TrainConfig> cells = sweep_cells(grid);
  SweepResult out;
  out.cells.resize(cells.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      SweepCellResult& r = out.cells[i];
      r.config = cells[i];
      try {
        const TrainResult tr = train(cells[i]);
        r.ok = true;
        r.final_scaled_reward = tr.final_scaled_reward;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
    }
  };
  const int jobs = std::min<int>(grid.jobs, static_cast<int>(std::max<std::size_t>(1, cells.size())));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int j = 0; j < jobs; ++j) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  // Group cells by (reward, hidden, noise) over seeds.
  std::vector<SweepSummaryRow> rows;
  std::map<std::size_t, std::vector<double>> values;
  for (const auto& cell : out.cells) {
    const TrainConfig& c = cell.config;
    std::size_t k = 0;
    for (; k < rows.size(); ++k) {
      if (rows[k].reward == c.reward && rows[k].ae_hidden == c.ae_hidden &&
          rows[k].demo_noise == c.demo_noise) {
        break;
      }
    }
    if (k == rows.size()) {
      SweepSummaryRow row;
      row.reward = c.reward;
      row.ae_hidden = c.ae_hidden;
      row.demo_noise = c.demo_noise;
      rows.push_back(row);
    }
    if (cell.ok && cell.final_scaled_reward) {
      ++rows[k].n_ok;
      values[k].push_back(*cell.final_scaled_reward);
    } else {
      ++rows[k].n_failed;
    }
  }
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto& v = values[k];
    if (v.empty()) continue;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    rows[k].mean = mean;
    rows[k].std = std::sqrt(var / static_cast<double>(v.size()));
  }
  std::vector<int> reward_rank(8, 0);
  for (std::size_t i = 0; i < grid.rewards.size(); ++i) {
    reward_rank[static_cast<std::size_t>(grid.rewards[i])] = static_cast<int>(i);
  }
  std::stable_sort(rows.begin(), rows.end(), [&](const auto& a, const auto& b) {
    const int ra = reward_rank[static_cast<std::size_t>(a.reward)];
    const int rb = reward_rank[static_cast<std::size_t>(b.reward)];
    if (ra != rb) return ra < rb;
    if (a.ae_hidden != b.ae_hidden) return a.ae_hidden < b.ae_hidden;
    return a.demo_noise < b.demo_noise;
  });
  out.summary = rows;

  const std::filesystem::path dir(grid.base.output_dir);
  std::filesystem::create_directories(dir);
  std::ofstream summary(dir / "summary.csv", std::ios::binary | std::ios::trunc);
  summary << "reward,ae_hidden,demo_noise,n_ok,n_failed,mean_scaled_reward,"
             "std_scaled_reward\n";
  for (const auto& r : rows) {
    summary << to_string(r.reward) << ',' << r.ae_hidden << ','
            << format_double(r.demo_noise) << ',' << r.n_ok << ',' << r.n_failed
            << ',' << (r.n_ok > 0 ? format_double(r.mean) : "") << ','
            << (r.n_ok > 0 ? format_double(r.std) : "") << '\n';
  }
  std::ofstream cells_csv(dir / "cells.csv", std::ios::binary | std::ios::trunc);
  cells_csv << "run_id,status,final_scaled_reward,error\n";
  for (const auto& cell : out.cells) {
    std::string err = cell.error;
    std::replace(err.begin(), err.end(), ',', ';');
    std::replace(err.begin(), err.end(), '\n', ' ');
    cells_csv << cell.config.run_id << ',' << (cell.ok ? "ok" : "failed") << ','
              << (cell.final_scaled_reward ? format_double(*cell.final_scaled_reward) : "")
              << ',' << err << '\n';
  }
  return out;
}

}  // namespace aeail
