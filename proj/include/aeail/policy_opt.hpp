#pragma once

// Gaussian policy, value critic, advantage estimation, the trust-region
// policy step and behavioral cloning.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <vector>

#include "aeail/diffnet.hpp"
#include "aeail/envlab.hpp"
#include "aeail/rng.hpp"

namespace aeail {

inline constexpr double kLogStdFloor = -20.0;

class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(int state_dim, int action_dim, Vector action_low,
                 Vector action_high, std::uint64_t seed, int hidden = 64);
  GaussianPolicy(MlpNet mean_net, Vector log_std, Vector action_low,
                 Vector action_high);

  int state_dim() const { return mean_net_.input_dim(); }
  int action_dim() const { return mean_net_.output_dim(); }
  MlpNet& mean_net() { return mean_net_; }
  const MlpNet& mean_net() const { return mean_net_; }
  const Vector& log_std() const { return log_std_; }
  // Entries below kLogStdFloor are raised to it.
  void set_log_std(const Vector& log_std);
  const Vector& action_low() const { return low_; }
  const Vector& action_high() const { return high_; }

  Vector mean(const Vector& s) const;
  Matrix mean_batch(const Matrix& states) const;
  Vector clip(const Vector& a) const;

  // Mean-network parameters followed by log_std.
  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);
  Eigen::Index parameter_count() const;

  bool operator==(const GaussianPolicy& other) const;

 private:
  MlpNet mean_net_;
  Vector log_std_;
  Vector low_;
  Vector high_;
};

enum class ActMode : std::uint8_t { kStochastic, kDeterministic };

struct SampledAction {
  Vector raw;      // before clipping; log_prob is evaluated here
  Vector clipped;  // what the environment receives
};

SampledAction sample_action(const GaussianPolicy& policy, const Vector& s,
                            ActMode mode, RandomStream& stream);
Vector act(const GaussianPolicy& policy, const Vector& s, ActMode mode,
           RandomStream& stream);

double log_prob(const GaussianPolicy& policy, const Vector& s, const Vector& a);
// Per-column log densities.
Vector log_prob_batch(const GaussianPolicy& policy, const Matrix& states,
                      const Matrix& actions);

// Mean over states of KL(old(.|s) || new(.|s)).
double mean_kl(const GaussianPolicy& old_policy,
               const GaussianPolicy& new_policy, const Matrix& states);

class ValueCritic {
 public:
  ValueCritic() = default;
  ValueCritic(int state_dim, std::uint64_t seed, int hidden = 64);
  explicit ValueCritic(MlpNet net);

  MlpNet& net() { return net_; }
  const MlpNet& net() const { return net_; }
  OptimizerState& optimizer() { return opt_; }

  double value(const Vector& s) const;
  Vector values(const Matrix& states) const;

 private:
  MlpNet net_;
  OptimizerState opt_;
};

// On-policy data for one iteration. Every per-step vector of trajectory i
// has trajectories[i].length() entries.
struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::vector<Matrix> raw_actions;
  std::vector<Vector> log_probs;
  std::vector<Vector> rewards;
  std::vector<Vector> advantages;      // normalized over the batch
  std::vector<Vector> raw_advantages;
  std::vector<Vector> value_targets;

  Eigen::Index pair_count() const;
  Matrix states() const;
  Matrix features() const;
  Matrix raw_action_matrix() const;
  Vector flat_log_probs() const;
  Vector flat_advantages() const;
  Vector flat_value_targets() const;
  // Throws ShapeError when per-step arrays are not length-aligned.
  void check_aligned() const;
};

struct GaeResult {
  Vector advantages;
  Vector value_targets;
};

// `values` has one more entry than `rewards`: the last is V(final_state).
// delta_t = r_t + gamma V_{t+1} (1 - done_t) - V_t,
// A_t = sum_k (gamma lambda)^k delta_{t+k}.
GaeResult compute_gae(const Vector& rewards, const Vector& values,
                      const std::vector<bool>& dones, double gamma,
                      double lambda);

// Fills advantages, raw_advantages and value_targets from batch.rewards.
void gae_advantages(RolloutBatch& batch, const ValueCritic& critic,
                    double gamma, double lambda);

// Flat view used by the trust-region step.
struct PolicyBatch {
  Matrix states;       // state_dim x N
  Matrix actions;      // action_dim x N, unclipped
  Vector old_log_probs;
  Vector advantages;
};

PolicyBatch make_policy_batch(const RolloutBatch& batch);

// mean_i exp(log_prob_i - old_log_prob_i) A_i. When `grad` is non-null it
// receives the gradient with respect to flat_parameters().
double surrogate(const GaussianPolicy& policy, const PolicyBatch& batch,
                 Vector* grad = nullptr);

// (F + damping I) v at the policy's current parameters, F the mean Fisher
// information of the action distribution over the batch states.
Vector fisher_vector_product(const GaussianPolicy& policy, const Matrix& states,
                             const Vector& v, double damping,
                             bool learn_log_std = true);

Vector conjugate_gradient(const std::function<Vector(const Vector&)>& apply,
                          const Vector& b, int iters, double residual_tol = 1e-10);

struct TrustRegionOptions {
  double max_kl = 0.01;
  int cg_iters = 10;
  double damping = 0.1;
  double backtrack_ratio = 0.5;
  int max_backtracks = 10;
  bool learn_log_std = true;
};

struct TrustRegionResult {
  bool accepted = false;
  double surrogate_before = 0.0;
  double surrogate_after = 0.0;
  double kl = 0.0;
  double step_fraction = 0.0;
};

TrustRegionResult trust_region_step(GaussianPolicy& policy,
                                    const PolicyBatch& batch,
                                    const TrustRegionOptions& options = {});

// Mean squared error of critic values against targets.
double critic_loss(const ValueCritic& critic, const Matrix& states,
                   const Vector& targets);
// n full-batch adam steps on critic_loss. Returns the loss before the first
// step.
double critic_update(ValueCritic& critic, const Matrix& states,
                     const Vector& targets, int n = 5, double lr = 2e-4);

struct BcOptions {
  int iters = 0;
  double learning_rate = 1e-3;
  int minibatch = 256;
  std::uint64_t seed = 0;
  // Fit log_std by maximum likelihood alongside the mean. Off: squared
  // error on the mean only, log_std untouched.
  bool learn_log_std = true;
};

// Mean over pairs of ||mean(s) - a||^2.
double bc_loss(const GaussianPolicy& policy, const Matrix& states,
               const Matrix& actions);
// Adam on the negative mean log-likelihood of the expert actions over
// minibatches drawn with replacement.
void bc_pretrain(GaussianPolicy& policy, const Matrix& states,
                 const Matrix& actions, const BcOptions& options);

// Network checkpoint followed by the log_std vector.
void write_policy(std::ostream& os, const GaussianPolicy& policy);
GaussianPolicy read_policy(std::istream& is, const Vector& action_low,
                           const Vector& action_high);
void save_policy(const std::filesystem::path& path,
                 const GaussianPolicy& policy);
GaussianPolicy load_policy(const std::filesystem::path& path,
                           const Vector& action_low, const Vector& action_high);

}  // namespace aeail
