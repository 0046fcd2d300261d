#pragma once

// The adversarial imitation loop, its configuration and grid sweeps.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aeail/envlab.hpp"
#include "aeail/policy_opt.hpp"
#include "aeail/reward_models.hpp"

namespace aeail {

struct TrainConfig {
  std::string env = "pointmass2d";
  RewardVariant reward = RewardVariant::kAeW;
  bool asw = false;

  // Demonstrations: read from demo_path when set, otherwise generated from
  // the scripted expert with demo_seed and corrupted with demo_noise.
  std::string demo_path;
  int n_demos = 10;
  double demo_noise = 0.0;
  std::optional<std::uint64_t> demo_seed;  // defaults to seed

  std::optional<int> iterations;  // per-env default
  int batch_size = 4096;
  std::optional<int> horizon;     // env default (1024)
  double gamma = 0.995;
  double lambda = 0.97;
  double max_kl = 0.01;
  int cg_iters = 10;
  double cg_damping = 0.1;
  double backtrack_ratio = 0.5;
  int max_backtracks = 10;
  bool learn_log_std = true;

  double reward_lr = 3e-4;
  double clip = 0.99;
  int ae_hidden = 100;
  int vae_latent = 100;
  double got_alpha = 5.0;
  double got_beta = 5.0;

  int policy_hidden = 64;
  int critic_updates = 5;
  double critic_lr = 2e-4;
  int policy_updates = 3;
  std::optional<int> bc_iters;  // per-env default
  double bc_lr = 1e-3;

  std::uint64_t seed = 0;
  int eval_every = 100;  // 0 disables evaluation
  int eval_rollouts = 10;
  std::uint64_t eval_seed = 0;
  std::string output_dir = "runs";
  std::string run_id;  // derived from the config when empty

  // Test hook: training-side environment reports NaN true rewards.
  bool poison_true_reward = false;
};

// Per-env budget defaults.
int default_iterations(std::string_view env);
int default_bc_iters(std::string_view env);

// Sets one key. Throws ConfigError on unknown keys or bad values.
void apply_config_value(TrainConfig& config, std::string_view key,
                        std::string_view value);
// key=value lines, '#' comments, blank lines ignored.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path);
// Fills per-env defaults and validates every field.
TrainConfig resolve_config(TrainConfig config);
// Canonical key=value text of a resolved config.
std::string config_to_text(const TrainConfig& config);
std::string default_run_id(const TrainConfig& config);

EnvSpec training_env_spec(const TrainConfig& config);

// Demonstrations as configured (loaded or generated, then corrupted).
DemonstrationSet prepare_demos(const TrainConfig& config, const EnvSpec& spec);

// Rolls out the stochastic policy until at least min_pairs state-action
// pairs are collected. Episode i uses env seed derive_seed(env_seed, i0 + i)
// where i0 is *episode_counter, which is advanced.
RolloutBatch collect_rollouts(const EnvSpec& spec, const GaussianPolicy& policy,
                              Eigen::Index min_pairs, RandomStream& stream,
                              std::uint64_t env_seed,
                              std::uint64_t* episode_counter);

struct EqualBatches {
  Matrix generated;
  Matrix expert;
};

// Draws batch_size columns from each source, without replacement when the
// source is large enough and with replacement otherwise.
EqualBatches sample_equal_batches(const Matrix& generated, const Matrix& expert,
                                  Eigen::Index batch_size, Rng& rng);

// Pseudo-rewards for every trajectory of the batch. With absorbing states
// the rewards of the padding are discounted into the last live step.
void fill_pseudo_rewards(RolloutBatch& batch, RewardModel& model, bool asw,
                         int horizon, double gamma);

inline constexpr const char* kMetricsHeader =
    "iteration,reward_loss,expert_pseudo_reward,generated_pseudo_reward,"
    "surrogate_gain,mean_kl,accepted_steps,eval_return_mean,eval_return_std,"
    "scaled_reward";

struct IterationMetrics {
  int iteration = 0;
  double reward_loss = 0.0;
  double expert_pseudo_reward = 0.0;
  double generated_pseudo_reward = 0.0;
  double surrogate_gain = 0.0;
  double mean_kl = 0.0;
  int accepted_steps = 0;
  std::optional<double> eval_return_mean;
  std::optional<double> eval_return_std;
  std::optional<double> scaled_reward;
  double seconds = 0.0;  // written to timing.csv only
};

std::string metrics_row(const IterationMetrics& m);

struct TrainResult {
  std::filesystem::path run_dir;
  TrainConfig config;
  std::vector<IterationMetrics> metrics;
  long policy_updates = 0;
  long reward_updates = 0;
  double max_reward_parameter = 0.0;  // largest |param| seen after updates
  std::optional<double> final_scaled_reward;
  std::optional<double> final_return;
};

// Writes into output_dir/run_id/: config.cfg, metrics.csv, timing.csv,
// policy.ckpt, critic.ckpt, reward.ckpt.
TrainResult train(const TrainConfig& config);

// ---------------------------------------------------------------------------
// Sweeps

// Grid file: the train config format where reward, ae_hidden, demo_noise and
// seed may hold comma-separated lists; `jobs` sets parallel workers.
struct SweepGrid {
  TrainConfig base;
  std::vector<RewardVariant> rewards;
  std::vector<int> ae_hidden;
  std::vector<double> demo_noise;
  std::vector<std::uint64_t> seeds;
  int jobs = 1;
};

SweepGrid parse_sweep_grid(std::string_view text);
SweepGrid load_sweep_grid(const std::filesystem::path& path);
std::vector<TrainConfig> sweep_cells(const SweepGrid& grid);

struct SweepCellResult {
  TrainConfig config;
  bool ok = false;
  std::string error;
  std::optional<double> final_scaled_reward;
};

struct SweepSummaryRow {
  RewardVariant reward = RewardVariant::kAeW;
  int ae_hidden = 0;
  double demo_noise = 0.0;
  int n_ok = 0;
  int n_failed = 0;
  double mean = 0.0;
  double std = 0.0;  // population, over seeds
};

struct SweepResult {
  std::vector<SweepCellResult> cells;
  std::vector<SweepSummaryRow> summary;
};

// Runs every cell; per-cell failures are recorded, not rethrown. Writes
// output_dir/summary.csv ordered by reward variant, AE hidden size, noise.
SweepResult sweep(const SweepGrid& grid);

}  // namespace aeail
