#include "aeail/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <utility>

#include "aeail/errors.hpp"

namespace aeail {

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double mean_return(const EnvSpec& spec, const StatePolicy& policy) {
  std::vector<double> r;
  r.reserve(kReferenceSeeds);
  for (int i = 0; i < kReferenceSeeds; ++i) {
    r.push_back(rollout(spec, policy, static_cast<std::uint64_t>(i)).true_return());
  }
  return mean_of(r);
}

}  // namespace

ReferenceReturns reference_returns(const EnvSpec& spec) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, ReferenceReturns> cache;
  EnvSpec clean = spec;
  clean.poison_true_reward = false;
  const auto key = std::make_pair(static_cast<int>(spec.name), spec.horizon);
  {
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  ReferenceReturns refs;
  const Vector zero = Vector::Zero(clean.action_dim);
  refs.random = mean_return(clean, [&](const Vector&) { return zero; });
  refs.expert = mean_return(clean, scripted_expert(clean));
  std::lock_guard<std::mutex> lock(mu);
  cache.emplace(key, refs);
  return refs;
}

std::vector<double> evaluation_returns(const GaussianPolicy& policy,
                                       const EnvSpec& spec, int n_rollouts,
                                       std::uint64_t seed) {
  if (n_rollouts < 1) throw ConfigError("n_rollouts must be at least 1");
  if (policy.state_dim() != spec.state_dim ||
      policy.action_dim() != spec.action_dim) {
    throw ShapeError("checkpoint has state/action dimensions " +
                     std::to_string(policy.state_dim()) + "/" +
                     std::to_string(policy.action_dim()) + " but env " +
                     std::string(to_string(spec.name)) + " has " +
                     std::to_string(spec.state_dim) + "/" +
                     std::to_string(spec.action_dim));
  }
  const StatePolicy deterministic = [&](const Vector& s) {
    return policy.clip(policy.mean(s));
  };
  std::vector<double> returns;
  returns.reserve(static_cast<std::size_t>(n_rollouts));
  for (int i = 0; i < n_rollouts; ++i) {
    returns.push_back(
        rollout(spec, deterministic, seed + static_cast<std::uint64_t>(i))
            .true_return());
  }
  return returns;
}

EvalReport evaluate(const GaussianPolicy& policy, const EnvSpec& spec,
                    int n_rollouts, std::uint64_t seed,
                    std::string checkpoint_id, bool with_references) {
  EvalReport report;
  report.env = spec.name;
  report.checkpoint_id = std::move(checkpoint_id);
  report.n_rollouts = n_rollouts;
  report.returns = evaluation_returns(policy, spec, n_rollouts, seed);
  report.mean = mean_of(report.returns);
  double var = 0.0;
  for (double r : report.returns) var += (r - report.mean) * (r - report.mean);
  report.std = std::sqrt(var / static_cast<double>(report.returns.size()));
  if (with_references) {
    const ReferenceReturns refs = reference_returns(spec);
    report.random_return = refs.random;
    report.expert_return = refs.expert;
    report.scaled = scaled_reward(report.mean, refs.random, refs.expert);
  }
  return report;
}

double scaled_reward(double ret, double random_ret, double expert_ret) {
  if (!(expert_ret != random_ret) || !std::isfinite(expert_ret - random_ret)) {
    throw ConfigError("scaled reward needs distinct finite expert and random references");
  }
  return (ret - random_ret) / (expert_ret - random_ret);
}

double relative_improvement(double ours, double baseline) {
  if (baseline == 0.0) throw ConfigError("relative improvement over a zero baseline");
  return (ours - baseline) / baseline;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void dump_latents(const RewardModel& model, const Matrix& expert,
                  const Matrix& generated, std::ostream& os) {
  const Matrix le = model.latent_activations(expert);
  const Matrix lg = model.latent_activations(generated);
  const Eigen::Index width = le.rows() > 0 ? le.rows() : lg.rows();
  os << "source";
  for (Eigen::Index j = 0; j < width; ++j) os << ",h" << j;
  os << '\n';
  const auto rows = [&](const Matrix& m, const char* label) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      os << label;
      for (Eigen::Index j = 0; j < m.rows(); ++j) os << ',' << format_double(m(j, c));
      os << '\n';
    }
  };
  rows(le, "expert");
  rows(lg, "generated");
}

void dump_latents(const RewardModel& model, const Matrix& expert,
                  const Matrix& generated, const std::filesystem::path& out) {
  std::ofstream os(out, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + out.string());
  dump_latents(model, expert, generated, os);
}

}  // namespace aeail
