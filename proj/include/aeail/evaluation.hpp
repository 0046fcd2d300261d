#pragma once

// Deterministic policy evaluation, scaled-reward metrics and latent export.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "aeail/envlab.hpp"
#include "aeail/policy_opt.hpp"
#include "aeail/reward_models.hpp"

namespace aeail {

struct EvalReport {
  EnvName env = EnvName::kPointMass2d;
  std::string checkpoint_id;
  int n_rollouts = 0;
  std::vector<double> returns;
  double mean = 0.0;
  double std = 0.0;  // population
  std::optional<double> expert_return;
  std::optional<double> random_return;
  std::optional<double> scaled;
};

// Mean true returns of the all-zero-action policy and of the scripted
// expert over seeds 0..99. Cached per (env, horizon).
struct ReferenceReturns {
  double random = 0.0;
  double expert = 0.0;
};
inline constexpr int kReferenceSeeds = 100;
ReferenceReturns reference_returns(const EnvSpec& spec);

// True returns of n deterministic-mode rollouts with seeds seed..seed+n-1.
std::vector<double> evaluation_returns(const GaussianPolicy& policy,
                                       const EnvSpec& spec, int n_rollouts,
                                       std::uint64_t seed);

EvalReport evaluate(const GaussianPolicy& policy, const EnvSpec& spec,
                    int n_rollouts = 10, std::uint64_t seed = 0,
                    std::string checkpoint_id = {},
                    bool with_references = true);

// (ret - random) / (expert - random)
double scaled_reward(double ret, double random_ret, double expert_ret);
// (ours - baseline) / baseline
double relative_improvement(double ours, double baseline);

// CSV: "source,h0,h1,..." then one row per column of `expert` (label
// expert) and `generated` (label generated).
void dump_latents(const RewardModel& model, const Matrix& expert,
                  const Matrix& generated, std::ostream& os);
void dump_latents(const RewardModel& model, const Matrix& expert,
                  const Matrix& generated, const std::filesystem::path& out);

std::string format_double(double v);

}  // namespace aeail
