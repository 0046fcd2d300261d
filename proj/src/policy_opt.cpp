#include "aeail/policy_opt.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "aeail/checkpoint.hpp"
#include "aeail/errors.hpp"

namespace aeail {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;

void check_bounds(const Vector& low, const Vector& high, int action_dim) {
  if (low.size() != action_dim || high.size() != action_dim) {
    throw ShapeError("action bounds have dimension " +
                     std::to_string(low.size()) + "/" +
                     std::to_string(high.size()) + ", policy has " +
                     std::to_string(action_dim));
  }
  if (!low.allFinite() || !high.allFinite() || (low.array() > high.array()).any()) {
    throw ConfigError("action bounds must be finite with low <= high");
  }
}

void check_states(const GaussianPolicy& p, Eigen::Index rows) {
  if (rows != p.state_dim()) {
    throw ShapeError("policy expects state dimension " +
                     std::to_string(p.state_dim()) + ", got " +
                     std::to_string(rows));
  }
}

Vector inverse_variance(const GaussianPolicy& p) {
  return (-2.0 * p.log_std().array()).exp().matrix();
}

}  // namespace

// ---------------------------------------------------------------------------
// GaussianPolicy

GaussianPolicy::GaussianPolicy(int state_dim, int action_dim, Vector action_low,
                               Vector action_high, std::uint64_t seed,
                               int hidden)
    : mean_net_({state_dim, hidden, hidden, action_dim}, seed),
      log_std_(Vector::Zero(action_dim)),
      low_(std::move(action_low)),
      high_(std::move(action_high)) {
  check_bounds(low_, high_, action_dim);
}

GaussianPolicy::GaussianPolicy(MlpNet mean_net, Vector log_std,
                               Vector action_low, Vector action_high)
    : mean_net_(std::move(mean_net)),
      low_(std::move(action_low)),
      high_(std::move(action_high)) {
  if (log_std.size() != mean_net_.output_dim()) {
    throw ShapeError("log_std has " + std::to_string(log_std.size()) +
                     " entries, policy has " +
                     std::to_string(mean_net_.output_dim()) + " actions");
  }
  check_bounds(low_, high_, mean_net_.output_dim());
  set_log_std(log_std);
}

void GaussianPolicy::set_log_std(const Vector& log_std) {
  if (log_std.size() != action_dim()) {
    throw ShapeError("log_std dimension mismatch");
  }
  if (!log_std.allFinite()) throw NumericFault("log_std is not finite");
  log_std_ = log_std.cwiseMax(kLogStdFloor);
}

Vector GaussianPolicy::mean(const Vector& s) const {
  check_states(*this, s.size());
  return mean_net_.forward(s);
}

Matrix GaussianPolicy::mean_batch(const Matrix& states) const {
  check_states(*this, states.rows());
  return mean_net_.forward_batch(states);
}

Vector GaussianPolicy::clip(const Vector& a) const {
  return a.cwiseMax(low_).cwiseMin(high_);
}

Vector GaussianPolicy::flat_parameters() const {
  const Vector net = mean_net_.flat_parameters();
  Vector out(net.size() + log_std_.size());
  out << net, log_std_;
  return out;
}

void GaussianPolicy::set_flat_parameters(const Vector& flat) {
  if (flat.size() != parameter_count()) {
    throw ShapeError("policy parameter vector has " +
                     std::to_string(flat.size()) + " entries, expected " +
                     std::to_string(parameter_count()));
  }
  const Eigen::Index n = mean_net_.parameter_count();
  mean_net_.set_flat_parameters(flat.head(n));
  set_log_std(flat.tail(log_std_.size()));
}

Eigen::Index GaussianPolicy::parameter_count() const {
  return mean_net_.parameter_count() + log_std_.size();
}

bool GaussianPolicy::operator==(const GaussianPolicy& other) const {
  return mean_net_ == other.mean_net_ && log_std_ == other.log_std_ &&
         low_ == other.low_ && high_ == other.high_;
}

SampledAction sample_action(const GaussianPolicy& policy, const Vector& s,
                            ActMode mode, RandomStream& stream) {
  SampledAction out;
  out.raw = policy.mean(s);
  if (mode == ActMode::kStochastic) {
    for (Eigen::Index j = 0; j < out.raw.size(); ++j) {
      out.raw[j] += std::exp(policy.log_std()[j]) * stream.gaussian();
    }
  }
  out.clipped = policy.clip(out.raw);
  return out;
}

Vector act(const GaussianPolicy& policy, const Vector& s, ActMode mode,
           RandomStream& stream) {
  return sample_action(policy, s, mode, stream).clipped;
}

double log_prob(const GaussianPolicy& policy, const Vector& s, const Vector& a) {
  if (a.size() != policy.action_dim()) {
    throw ShapeError("action has dimension " + std::to_string(a.size()) +
                     ", policy has " + std::to_string(policy.action_dim()));
  }
  return log_prob_batch(policy, s, a)[0];
}

Vector log_prob_batch(const GaussianPolicy& policy, const Matrix& states,
                      const Matrix& actions) {
  if (actions.rows() != policy.action_dim() || actions.cols() != states.cols()) {
    throw ShapeError("action batch does not match policy or state batch");
  }
  const Matrix mu = policy.mean_batch(states);
  const Vector inv_var = inverse_variance(policy);
  const double log_norm =
      policy.log_std().sum() + kHalfLog2Pi * static_cast<double>(policy.action_dim());
  Matrix z2 = (actions - mu).array().square();
  z2.array().colwise() *= inv_var.array();
  return (-0.5 * z2.colwise().sum().array() - log_norm).matrix().transpose();
}

double mean_kl(const GaussianPolicy& old_policy,
               const GaussianPolicy& new_policy, const Matrix& states) {
  if (states.cols() == 0) return 0.0;
  const Matrix mu_old = old_policy.mean_batch(states);
  const Matrix mu_new = new_policy.mean_batch(states);
  const Vector& ls_old = old_policy.log_std();
  const Vector& ls_new = new_policy.log_std();
  const Vector var_old = (2.0 * ls_old.array()).exp().matrix();
  const Vector inv_var_new = (-2.0 * ls_new.array()).exp().matrix();
  const double constant =
      (ls_new - ls_old).sum() +
      0.5 * (var_old.array() * inv_var_new.array()).sum() -
      0.5 * static_cast<double>(ls_old.size());
  Matrix d2 = (mu_old - mu_new).array().square();
  d2.array().colwise() *= inv_var_new.array();
  return constant + 0.5 * d2.sum() / static_cast<double>(states.cols());
}

// ---------------------------------------------------------------------------
// ValueCritic

ValueCritic::ValueCritic(int state_dim, std::uint64_t seed, int hidden)
    : net_({state_dim, hidden, hidden, 1}, seed),
      opt_(OptimizerState::adam(2e-4)) {}

ValueCritic::ValueCritic(MlpNet net)
    : net_(std::move(net)), opt_(OptimizerState::adam(2e-4)) {
  if (net_.output_dim() != 1) throw ShapeError("critic must have one output");
}

double ValueCritic::value(const Vector& s) const { return net_.forward(s)[0]; }

Vector ValueCritic::values(const Matrix& states) const {
  return net_.forward_batch(states).row(0).transpose();
}

// ---------------------------------------------------------------------------
// RolloutBatch

Eigen::Index RolloutBatch::pair_count() const {
  Eigen::Index n = 0;
  for (const auto& t : trajectories) n += t.length();
  return n;
}

namespace {

template <typename Get>
Matrix concat_columns(const std::vector<Trajectory>& ts, Eigen::Index rows,
                      Eigen::Index total, Get get) {
  Matrix out(rows, total);
  Eigen::Index c = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const Matrix& m = get(i);
    out.middleCols(c, m.cols()) = m;
    c += m.cols();
  }
  return out;
}

Vector concat_vectors(const std::vector<Vector>& vs) {
  Eigen::Index n = 0;
  for (const auto& v : vs) n += v.size();
  Vector out(n);
  Eigen::Index c = 0;
  for (const auto& v : vs) {
    out.segment(c, v.size()) = v;
    c += v.size();
  }
  return out;
}

}  // namespace

Matrix RolloutBatch::states() const {
  if (trajectories.empty()) return Matrix();
  return concat_columns(trajectories, trajectories.front().states.rows(),
                        pair_count(),
                        [&](std::size_t i) -> const Matrix& {
                          return trajectories[i].states;
                        });
}

Matrix RolloutBatch::features() const {
  if (trajectories.empty()) return Matrix();
  std::vector<Matrix> f;
  f.reserve(trajectories.size());
  for (const auto& t : trajectories) f.push_back(t.features());
  return concat_columns(trajectories, f.front().rows(), pair_count(),
                        [&](std::size_t i) -> const Matrix& { return f[i]; });
}

Matrix RolloutBatch::raw_action_matrix() const {
  if (raw_actions.empty()) return Matrix();
  return concat_columns(trajectories, raw_actions.front().rows(), pair_count(),
                        [&](std::size_t i) -> const Matrix& {
                          return raw_actions[i];
                        });
}

Vector RolloutBatch::flat_log_probs() const { return concat_vectors(log_probs); }
Vector RolloutBatch::flat_advantages() const { return concat_vectors(advantages); }
Vector RolloutBatch::flat_value_targets() const {
  return concat_vectors(value_targets);
}

void RolloutBatch::check_aligned() const {
  const std::size_t n = trajectories.size();
  auto check_vec = [&](const std::vector<Vector>& v, const char* what,
                       bool optional) {
    if (v.empty() && optional) return;
    if (v.size() != n) {
      throw ShapeError(std::string(what) + " has " + std::to_string(v.size()) +
                       " entries for " + std::to_string(n) + " trajectories");
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (v[i].size() != trajectories[i].length()) {
        throw ShapeError(std::string(what) + " of trajectory " +
                         std::to_string(i) + " is not length-aligned");
      }
    }
  };
  if (raw_actions.size() != n) throw ShapeError("raw_actions count mismatch");
  for (std::size_t i = 0; i < n; ++i) {
    if (raw_actions[i].cols() != trajectories[i].length()) {
      throw ShapeError("raw_actions of trajectory " + std::to_string(i) +
                       " is not length-aligned");
    }
  }
  check_vec(log_probs, "log_probs", false);
  check_vec(rewards, "rewards", true);
  check_vec(advantages, "advantages", true);
  check_vec(raw_advantages, "raw_advantages", true);
  check_vec(value_targets, "value_targets", true);
}

// ---------------------------------------------------------------------------
// Advantages

GaeResult compute_gae(const Vector& rewards, const Vector& values,
                      const std::vector<bool>& dones, double gamma,
                      double lambda) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n + 1 || static_cast<Eigen::Index>(dones.size()) != n) {
    throw ShapeError("GAE needs T rewards, T dones and T+1 values");
  }
  GaeResult out;
  out.advantages.resize(n);
  double running = 0.0;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double live = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * live - values[t];
    running = delta + gamma * lambda * live * running;
    out.advantages[t] = running;
  }
  out.value_targets = out.advantages + values.head(n);
  return out;
}

void gae_advantages(RolloutBatch& batch, const ValueCritic& critic,
                    double gamma, double lambda) {
  if (batch.rewards.size() != batch.trajectories.size()) {
    throw DataError("pseudo-rewards must be filled before computing advantages");
  }
  batch.check_aligned();
  const std::size_t n = batch.trajectories.size();
  batch.raw_advantages.assign(n, Vector());
  batch.value_targets.assign(n, Vector());
  for (std::size_t i = 0; i < n; ++i) {
    const Trajectory& t = batch.trajectories[i];
    Vector v(t.length() + 1);
    v.head(t.length()) = critic.values(t.states);
    v[t.length()] = t.final_state.size() == t.states.rows()
                        ? critic.value(t.final_state)
                        : 0.0;
    GaeResult g = compute_gae(batch.rewards[i], v, t.dones, gamma, lambda);
    batch.raw_advantages[i] = std::move(g.advantages);
    batch.value_targets[i] = std::move(g.value_targets);
  }
  const Vector all = concat_vectors(batch.raw_advantages);
  const double mean = all.size() > 0 ? all.mean() : 0.0;
  const double var =
      all.size() > 0 ? (all.array() - mean).square().mean() : 0.0;
  const double sd = std::sqrt(var);
  const double scale = sd > 1e-8 ? 1.0 / sd : 1.0;
  batch.advantages.assign(n, Vector());
  for (std::size_t i = 0; i < n; ++i) {
    batch.advantages[i] = ((batch.raw_advantages[i].array() - mean) * scale).matrix();
  }
}

PolicyBatch make_policy_batch(const RolloutBatch& batch) {
  batch.check_aligned();
  if (batch.advantages.size() != batch.trajectories.size()) {
    throw DataError("advantages must be computed before a policy update");
  }
  PolicyBatch out;
  out.states = batch.states();
  out.actions = batch.raw_action_matrix();
  out.old_log_probs = batch.flat_log_probs();
  out.advantages = batch.flat_advantages();
  return out;
}

// ---------------------------------------------------------------------------
// Trust-region step

namespace {

void check_policy_batch(const GaussianPolicy& p, const PolicyBatch& b) {
  check_states(p, b.states.rows());
  const Eigen::Index n = b.states.cols();
  if (b.actions.rows() != p.action_dim() || b.actions.cols() != n ||
      b.old_log_probs.size() != n || b.advantages.size() != n) {
    throw ShapeError("policy batch arrays are not aligned");
  }
  if (n == 0) throw DataError("policy batch is empty");
}

}  // namespace

double surrogate(const GaussianPolicy& policy, const PolicyBatch& batch,
                 Vector* grad) {
  check_policy_batch(policy, batch);
  const double n = static_cast<double>(batch.states.cols());
  ForwardTape tape;
  const Matrix mu = policy.mean_net().forward_batch(batch.states, &tape);
  const Vector inv_var = inverse_variance(policy);
  const double log_norm =
      policy.log_std().sum() + kHalfLog2Pi * static_cast<double>(policy.action_dim());
  const Matrix diff = batch.actions - mu;
  Matrix z2 = diff.array().square();
  z2.array().colwise() *= inv_var.array();
  const Vector logp =
      (-0.5 * z2.colwise().sum().array() - log_norm).matrix().transpose();
  const Vector weight =
      ((logp - batch.old_log_probs).array().exp() * batch.advantages.array())
          .matrix();
  const double value = weight.sum() / n;
  if (!std::isfinite(value)) throw NumericFault("policy surrogate is not finite");
  if (grad != nullptr) {
    Matrix upstream = diff;
    upstream.array().colwise() *= inv_var.array();
    upstream.array().rowwise() *= (weight.transpose() / n).array();
    GradientSet g(policy.mean_net());
    policy.mean_net().backward_batch(tape, upstream, g);
    Vector d_log_std = ((z2.array() - 1.0).matrix() * weight) / n;
    grad->resize(policy.parameter_count());
    *grad << g.flatten(), d_log_std;
  }
  return value;
}

Vector fisher_vector_product(const GaussianPolicy& policy, const Matrix& states,
                             const Vector& v, double damping,
                             bool learn_log_std) {
  check_states(policy, states.rows());
  if (v.size() != policy.parameter_count()) {
    throw ShapeError("Fisher-vector product argument has the wrong length");
  }
  const Eigen::Index np = policy.mean_net().parameter_count();
  const Eigen::Index na = policy.action_dim();
  const double n = static_cast<double>(states.cols());
  ForwardTape tape;
  policy.mean_net().forward_batch(states, &tape);
  GradientSet tangent(policy.mean_net());
  tangent.assign_flat(v.head(np));
  Matrix jv = policy.mean_net().jvp_batch(tape, tangent);
  jv.array().colwise() *= inverse_variance(policy).array();
  jv /= n;
  GradientSet back(policy.mean_net());
  policy.mean_net().backward_batch(tape, jv, back);
  Vector out(v.size());
  out.head(np) = back.flatten();
  if (learn_log_std) {
    out.tail(na) = 2.0 * v.tail(na);
  } else {
    out.tail(na).setZero();
  }
  return out + damping * v;
}

Vector conjugate_gradient(const std::function<Vector(const Vector&)>& apply,
                          const Vector& b, int iters, double residual_tol) {
  Vector x = Vector::Zero(b.size());
  Vector r = b;
  Vector p = b;
  double rr = r.squaredNorm();
  for (int i = 0; i < iters && rr > residual_tol; ++i) {
    const Vector ap = apply(p);
    const double alpha = rr / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    const double rr_next = r.squaredNorm();
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  return x;
}

TrustRegionResult trust_region_step(GaussianPolicy& policy,
                                    const PolicyBatch& batch,
                                    const TrustRegionOptions& options) {
  TrustRegionResult result;
  Vector g;
  result.surrogate_before = surrogate(policy, batch, &g);
  result.surrogate_after = result.surrogate_before;
  const Eigen::Index na = policy.action_dim();
  if (!options.learn_log_std) g.tail(na).setZero();
  if (!g.allFinite()) throw NumericFault("policy gradient is not finite");
  if (g.squaredNorm() == 0.0) return result;

  const GaussianPolicy old = policy;
  const auto fvp = [&](const Vector& v) {
    return fisher_vector_product(old, batch.states, v, options.damping,
                                 options.learn_log_std);
  };
  const Vector x = conjugate_gradient(fvp, g, options.cg_iters);
  const double xfx = x.dot(fvp(x));
  if (!(xfx > 0.0) || !std::isfinite(xfx)) return result;
  const Vector full_step = std::sqrt(2.0 * options.max_kl / xfx) * x;

  const Vector theta0 = old.flat_parameters();
  double fraction = 1.0;
  for (int k = 0; k <= options.max_backtracks; ++k) {
    policy.set_flat_parameters(theta0 + fraction * full_step);
    const double surr = surrogate(policy, batch);
    const double kl = mean_kl(old, policy, batch.states);
    if (std::isfinite(kl) && surr > result.surrogate_before &&
        kl <= options.max_kl) {
      result.accepted = true;
      result.surrogate_after = surr;
      result.kl = kl;
      result.step_fraction = fraction;
      return result;
    }
    fraction *= options.backtrack_ratio;
  }
  policy = old;
  return result;
}

// ---------------------------------------------------------------------------
// Critic and behavioral cloning

double critic_loss(const ValueCritic& critic, const Matrix& states,
                   const Vector& targets) {
  if (targets.size() != states.cols()) throw ShapeError("critic targets misaligned");
  if (targets.size() == 0) return 0.0;
  return (critic.values(states) - targets).squaredNorm() /
         static_cast<double>(targets.size());
}

double critic_update(ValueCritic& critic, const Matrix& states,
                     const Vector& targets, int n, double lr) {
  if (targets.size() != states.cols()) throw ShapeError("critic targets misaligned");
  if (targets.size() == 0) return 0.0;
  critic.optimizer().learning_rate = lr;
  const double count = static_cast<double>(targets.size());
  double first = 0.0;
  for (int i = 0; i < n; ++i) {
    ForwardTape tape;
    const Matrix v = critic.net().forward_batch(states, &tape);
    const Matrix err = v - targets.transpose();
    if (i == 0) first = err.squaredNorm() / count;
    GradientSet g(critic.net());
    critic.net().backward_batch(tape, 2.0 * err / count, g);
    optimizer_step(critic.net(), critic.optimizer(), g);
  }
  return first;
}

double bc_loss(const GaussianPolicy& policy, const Matrix& states,
               const Matrix& actions) {
  if (actions.cols() != states.cols() || actions.rows() != policy.action_dim()) {
    throw ShapeError("behavioral-cloning actions misaligned");
  }
  if (states.cols() == 0) return 0.0;
  return (policy.mean_batch(states) - actions).squaredNorm() /
         static_cast<double>(states.cols());
}

void bc_pretrain(GaussianPolicy& policy, const Matrix& states,
                 const Matrix& actions, const BcOptions& options) {
  if (options.iters <= 0) return;
  if (states.cols() == 0) throw DataError("behavioral cloning needs demonstrations");
  check_states(policy, states.rows());
  if (actions.cols() != states.cols() || actions.rows() != policy.action_dim()) {
    throw ShapeError("behavioral-cloning actions misaligned");
  }
  Rng rng(options.seed);
  OptimizerState opt = OptimizerState::adam(options.learning_rate);
  // Adam moments for log_std, same constants as `opt`.
  const Eigen::Index na = policy.action_dim();
  Vector m1 = Vector::Zero(na), m2 = Vector::Zero(na);
  const auto total = static_cast<std::size_t>(states.cols());
  const Eigen::Index m = std::max(1, options.minibatch);
  const double dm = static_cast<double>(m);
  Matrix s(states.rows(), m), a(actions.rows(), m);
  for (int it = 0; it < options.iters; ++it) {
    for (Eigen::Index c = 0; c < m; ++c) {
      const auto k = static_cast<Eigen::Index>(uniform_index(rng, total));
      s.col(c) = states.col(k);
      a.col(c) = actions.col(k);
    }
    ForwardTape tape;
    const Matrix mu = policy.mean_net().forward_batch(s, &tape);
    GradientSet g(policy.mean_net());
    if (!options.learn_log_std) {
      policy.mean_net().backward_batch(tape, 2.0 * (mu - a) / dm, g);
      optimizer_step(policy.mean_net(), opt, g);
      continue;
    }
    const Vector inv_var = inverse_variance(policy);
    Matrix upstream = mu - a;
    const Vector z2 =
        (upstream.array().square().colwise() * inv_var.array()).rowwise().sum() / dm;
    upstream.array().colwise() *= inv_var.array();
    policy.mean_net().backward_batch(tape, upstream / dm, g);
    const Vector g_log_std = (Vector::Ones(na) - z2);
    if (!g_log_std.allFinite()) throw NumericFault("behavioral-cloning log_std gradient");
    optimizer_step(policy.mean_net(), opt, g);
    m1 = opt.beta1 * m1 + (1.0 - opt.beta1) * g_log_std;
    m2 = opt.beta2 * m2 + (1.0 - opt.beta2) * g_log_std.cwiseProduct(g_log_std);
    const double t = static_cast<double>(opt.step_count);
    const Vector step = (m1 / (1.0 - std::pow(opt.beta1, t))).array() /
                        ((m2 / (1.0 - std::pow(opt.beta2, t))).array().sqrt() + opt.epsilon);
    policy.set_log_std(policy.log_std() - opt.learning_rate * step);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints

void write_policy(std::ostream& os, const GaussianPolicy& policy) {
  write_net(os, policy.mean_net());
  write_f64_vector(os, policy.log_std());
}

GaussianPolicy read_policy(std::istream& is, const Vector& action_low,
                           const Vector& action_high) {
  MlpNet net = read_net(is);
  Vector log_std = read_f64_vector(is);
  return GaussianPolicy(std::move(net), std::move(log_std), action_low,
                        action_high);
}

void save_policy(const std::filesystem::path& path,
                 const GaussianPolicy& policy) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_policy(os, policy);
}

GaussianPolicy load_policy(const std::filesystem::path& path,
                           const Vector& action_low, const Vector& action_high) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  return read_policy(is, action_low, action_high);
}

}  // namespace aeail
