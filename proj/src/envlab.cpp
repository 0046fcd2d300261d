#include "aeail/envlab.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "aeail/errors.hpp"
#include "aeail/rng.hpp"

namespace aeail {

namespace {

double wrap_angle(double theta) {
  constexpr double kPi = std::numbers::pi;
  double w = std::fmod(theta + kPi, 2.0 * kPi);
  if (w < 0.0) w += 2.0 * kPi;
  return w - kPi;
}

void check_dims(const EnvSpec& spec, const Vector& s, const Vector& a) {
  if (s.size() != spec.state_dim) {
    throw ShapeError(std::string(to_string(spec.name)) + " state has dimension " +
                     std::to_string(spec.state_dim) + ", got " +
                     std::to_string(s.size()));
  }
  if (a.size() != spec.action_dim) {
    throw ShapeError(std::string(to_string(spec.name)) +
                     " action has dimension " +
                     std::to_string(spec.action_dim) + ", got " +
                     std::to_string(a.size()));
  }
}

Transition step_pointmass(const EnvSpec& spec, const Vector& s,
                          const Vector& a) {
  Transition t;
  t.s = s;
  t.a = a;
  const Vector pos = s.head<2>();
  const Vector vel = s.tail<2>();
  t.s_next.resize(4);
  t.s_next.head<2>() = pos + vel * spec.dt + 0.5 * a * spec.dt * spec.dt;
  t.s_next.tail<2>() = vel + a * spec.dt;
  t.true_reward =
      -(pos - spec.goal).squaredNorm() - spec.action_cost * a.squaredNorm();
  return t;
}

Transition step_pendulum(const EnvSpec& spec, const Vector& s,
                         const Vector& a) {
  Transition t;
  t.s = s;
  t.a = a;
  const double theta = s[0];
  const double omega = s[1];
  const double u = a[0];
  const double accel = 3.0 * spec.gravity / (2.0 * spec.length) * std::sin(theta) +
                       3.0 / (spec.mass * spec.length * spec.length) * u;
  const double omega_next =
      std::clamp(omega + accel * spec.dt, -spec.max_speed, spec.max_speed);
  t.s_next.resize(2);
  t.s_next[0] = wrap_angle(theta + omega_next * spec.dt);
  t.s_next[1] = omega_next;
  const double angle = wrap_angle(theta);
  t.true_reward = -(angle * angle + 0.1 * omega * omega + 0.001 * u * u);
  return t;
}

Transition step_cartpole(const EnvSpec& spec, const Vector& s,
                         const Vector& a) {
  Transition t;
  t.s = s;
  t.a = a;
  const double x = s[0];
  const double x_dot = s[1];
  const double theta = s[2];
  const double theta_dot = s[3];
  const double force = a[0];
  const double total_mass = spec.cart_mass + spec.pole_mass;
  const double pole_mass_length = spec.pole_mass * spec.pole_half_length;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double temp =
      (force + pole_mass_length * theta_dot * theta_dot * sin_t) / total_mass;
  const double theta_acc =
      (spec.gravity * sin_t - cos_t * temp) /
      (spec.pole_half_length *
       (4.0 / 3.0 - spec.pole_mass * cos_t * cos_t / total_mass));
  const double x_acc = temp - pole_mass_length * theta_acc * cos_t / total_mass;
  t.s_next.resize(4);
  t.s_next[0] = x + spec.dt * x_dot;
  t.s_next[1] = x_dot + spec.dt * x_acc;
  t.s_next[2] = theta + spec.dt * theta_dot;
  t.s_next[3] = theta_dot + spec.dt * theta_acc;
  t.done = std::abs(t.s_next[2]) > spec.angle_limit ||
           std::abs(t.s_next[0]) > spec.position_limit;
  t.true_reward = 1.0;
  return t;
}

// Central-difference linearization of the dynamics around (x0, u0).
void linearize(const EnvSpec& spec, const Vector& x0, const Vector& u0,
               Matrix& a, Matrix& b) {
  constexpr double kEps = 1e-6;
  a.resize(spec.state_dim, spec.state_dim);
  b.resize(spec.state_dim, spec.action_dim);
  for (int i = 0; i < spec.state_dim; ++i) {
    Vector up = x0, down = x0;
    up[i] += kEps;
    down[i] -= kEps;
    a.col(i) = (env_step(spec, up, u0).s_next - env_step(spec, down, u0).s_next) /
               (2.0 * kEps);
  }
  for (int i = 0; i < spec.action_dim; ++i) {
    Vector up = u0, down = u0;
    up[i] += kEps;
    down[i] -= kEps;
    b.col(i) = (env_step(spec, x0, up).s_next - env_step(spec, x0, down).s_next) /
               (2.0 * kEps);
  }
}

}  // namespace

std::string_view to_string(EnvName name) {
  switch (name) {
    case EnvName::kPointMass2d:
      return "pointmass2d";
    case EnvName::kPendulum:
      return "pendulum";
    case EnvName::kCartPoleCont:
      return "cartpole_cont";
  }
  return "unknown";
}

EnvName env_name_from_string(std::string_view name) {
  if (name == "pointmass2d") return EnvName::kPointMass2d;
  if (name == "pendulum") return EnvName::kPendulum;
  if (name == "cartpole_cont") return EnvName::kCartPoleCont;
  throw ConfigError("unknown environment '" + std::string(name) +
                    "' (expected pointmass2d, pendulum or cartpole_cont)");
}

EnvSpec make_env_spec(EnvName name) {
  EnvSpec spec;
  spec.name = name;
  switch (name) {
    case EnvName::kPointMass2d:
      spec.state_dim = 4;
      spec.action_dim = 2;
      spec.action_low = Vector::Constant(2, -1.0);
      spec.action_high = Vector::Constant(2, 1.0);
      spec.dt = 0.05;
      spec.goal = Vector::Zero(2);
      break;
    case EnvName::kPendulum:
      spec.state_dim = 2;
      spec.action_dim = 1;
      spec.action_low = Vector::Constant(1, -2.0);
      spec.action_high = Vector::Constant(1, 2.0);
      spec.dt = 0.05;
      spec.gravity = 9.81;
      break;
    case EnvName::kCartPoleCont:
      spec.state_dim = 4;
      spec.action_dim = 1;
      spec.action_low = Vector::Constant(1, -10.0);
      spec.action_high = Vector::Constant(1, 10.0);
      spec.dt = 0.02;
      spec.gravity = 9.8;
      break;
  }
  return spec;
}

EnvSpec make_env_spec(std::string_view name) {
  return make_env_spec(env_name_from_string(name));
}

Vector nominal_start(const EnvSpec& spec) {
  Vector x = Vector::Zero(spec.state_dim);
  if (spec.name == EnvName::kPendulum) x[0] = std::numbers::pi;
  return x;
}

Vector reset_box_half_width(const EnvSpec& spec) {
  switch (spec.name) {
    case EnvName::kPointMass2d:
      return (Vector(4) << 1.0, 1.0, 0.0, 0.0).finished();
    case EnvName::kPendulum:
      return (Vector(2) << 0.1, 0.1).finished();
    case EnvName::kCartPoleCont:
      return Vector::Constant(4, 0.05);
  }
  return Vector::Zero(spec.state_dim);
}

Vector env_reset(const EnvSpec& spec, std::uint64_t seed) {
  Rng rng(mix_seed(seed));
  const Vector half = reset_box_half_width(spec);
  Vector x = nominal_start(spec);
  for (int i = 0; i < spec.state_dim; ++i) {
    x[i] += uniform_in(rng, -half[i], half[i]);
  }
  if (spec.name == EnvName::kPendulum) x[0] = wrap_angle(x[0]);
  return x;
}

Vector clip_action(const EnvSpec& spec, const Vector& a) {
  if (a.size() != spec.action_dim) {
    throw ShapeError("action has dimension " + std::to_string(a.size()) +
                     ", environment expects " + std::to_string(spec.action_dim));
  }
  return a.cwiseMax(spec.action_low).cwiseMin(spec.action_high);
}

Transition env_step(const EnvSpec& spec, const Vector& s, const Vector& a) {
  check_dims(spec, s, a);
  const Vector u = clip_action(spec, a);
  Transition t;
  switch (spec.name) {
    case EnvName::kPointMass2d:
      t = step_pointmass(spec, s, u);
      break;
    case EnvName::kPendulum:
      t = step_pendulum(spec, s, u);
      break;
    case EnvName::kCartPoleCont:
      t = step_cartpole(spec, s, u);
      break;
  }
  if (!t.s_next.allFinite()) {
    throw NumericFault(std::string(to_string(spec.name)) +
                       " produced a non-finite state");
  }
  if (spec.poison_true_reward) {
    t.true_reward = std::numeric_limits<double>::quiet_NaN();
  }
  return t;
}

Matrix solve_dlqr(const Matrix& a, const Matrix& b, const Matrix& q,
                  const Matrix& r, int max_iters, double tol) {
  Matrix p = q;
  for (int it = 0; it < max_iters; ++it) {
    const Matrix btp = b.transpose() * p;
    const Matrix gain = (r + btp * b).ldlt().solve(btp * a);
    Matrix next = q + a.transpose() * p * (a - b * gain);
    next = 0.5 * (next + next.transpose());
    const double change = (next - p).cwiseAbs().maxCoeff();
    p = std::move(next);
    if (change < tol * std::max(1.0, p.cwiseAbs().maxCoeff())) break;
  }
  const Matrix btp = b.transpose() * p;
  return (r + btp * b).ldlt().solve(btp * a);
}

StatePolicy scripted_expert(const EnvSpec& spec) {
  switch (spec.name) {
    case EnvName::kPointMass2d: {
      Matrix a, b;
      linearize(spec, Vector::Zero(4), Vector::Zero(2), a, b);
      Matrix q = Matrix::Zero(4, 4);
      q(0, 0) = q(1, 1) = 1.0;
      const Matrix r = spec.action_cost * Matrix::Identity(2, 2);
      const Matrix gain = solve_dlqr(a, b, q, r);
      return [spec, gain](const Vector& s) -> Vector {
        Vector err = s;
        err.head<2>() -= spec.goal;
        return clip_action(spec, -gain * err);
      };
    }
    case EnvName::kPendulum: {
      Matrix a, b;
      linearize(spec, Vector::Zero(2), Vector::Zero(1), a, b);
      const Matrix q = (Vector(2) << 1.0, 0.1).finished().asDiagonal();
      const Matrix r = Matrix::Constant(1, 1, 0.001);
      const Matrix gain = solve_dlqr(a, b, q, r);
      return [spec, gain](const Vector& s) -> Vector {
        const double theta = wrap_angle(s[0]);
        const double omega = s[1];
        if (std::abs(theta) < 0.3 && std::abs(omega) < 2.0) {
          Vector x(2);
          x << theta, omega;
          return clip_action(spec, -gain * x);
        }
        // Energy pumping towards the upright energy level.
        const double inertia = spec.mass * spec.length * spec.length / 3.0;
        const double energy =
            0.5 * inertia * omega * omega +
            spec.mass * spec.gravity * 0.5 * spec.length * (std::cos(theta) - 1.0);
        double u = -10.0 * energy * omega;
        if (std::abs(omega) < 1e-3) u = spec.action_high[0];
        return clip_action(spec, Vector::Constant(1, u));
      };
    }
    case EnvName::kCartPoleCont: {
      Matrix a, b;
      linearize(spec, Vector::Zero(4), Vector::Zero(1), a, b);
      const Matrix q = (Vector(4) << 1.0, 1.0, 10.0, 1.0).finished().asDiagonal();
      const Matrix r = Matrix::Constant(1, 1, 0.01);
      const Matrix gain = solve_dlqr(a, b, q, r);
      return [spec, gain](const Vector& s) -> Vector {
        return clip_action(spec, -gain * s);
      };
    }
  }
  throw ConfigError("no expert for environment");
}

// ---------------------------------------------------------------------------
// Trajectories and rollouts

Matrix Trajectory::features() const {
  Matrix f(states.rows() + actions.rows(), states.cols());
  f.topRows(states.rows()) = states;
  f.bottomRows(actions.rows()) = actions;
  return f;
}

bool Trajectory::operator==(const Trajectory& other) const {
  return states.rows() == other.states.rows() &&
         states.cols() == other.states.cols() && states == other.states &&
         actions.rows() == other.actions.rows() &&
         actions.cols() == other.actions.cols() && actions == other.actions &&
         dones == other.dones;
}

double RolloutResult::true_return() const {
  double total = 0.0;
  for (double r : true_rewards) total += r;
  return total;
}

RolloutResult rollout(const EnvSpec& spec, const StatePolicy& policy,
                      std::uint64_t seed) {
  RolloutResult result;
  std::vector<Vector> states, actions;
  Vector s = env_reset(spec, seed);
  for (int t = 0; t < spec.horizon; ++t) {
    const Vector a = clip_action(spec, policy(s));
    Transition tr = env_step(spec, s, a);
    states.push_back(s);
    actions.push_back(a);
    result.trajectory.dones.push_back(tr.done);
    result.true_rewards.push_back(tr.true_reward);
    s = std::move(tr.s_next);
    if (tr.done) break;
  }
  const auto n = static_cast<Eigen::Index>(states.size());
  result.trajectory.states.resize(spec.state_dim, n);
  result.trajectory.actions.resize(spec.action_dim, n);
  for (Eigen::Index t = 0; t < n; ++t) {
    result.trajectory.states.col(t) = states[t];
    result.trajectory.actions.col(t) = actions[t];
  }
  result.trajectory.final_state = s;
  return result;
}

// ---------------------------------------------------------------------------
// FeatureNormalizer

FeatureNormalizer::FeatureNormalizer(Vector mean, Vector std)
    : mean_(std::move(mean)), std_(std::move(std)) {
  if (mean_.size() != std_.size()) {
    throw ShapeError("normalizer mean and std differ in length");
  }
  std_ = std_.cwiseMax(kStdFloor);
}

FeatureNormalizer FeatureNormalizer::identity(int dim) {
  return FeatureNormalizer(Vector::Zero(dim), Vector::Ones(dim));
}

FeatureNormalizer FeatureNormalizer::fit(const Matrix& features) {
  if (features.cols() == 0) throw DataError("cannot fit a normalizer on no data");
  const Vector mean = features.rowwise().mean();
  const Matrix centered = features.colwise() - mean;
  const Vector var =
      centered.array().square().rowwise().sum() / static_cast<double>(features.cols());
  return FeatureNormalizer(mean, var.array().sqrt().matrix());
}

void FeatureNormalizer::check(Eigen::Index rows) const {
  if (rows != mean_.size()) {
    throw ShapeError("normalizer has dimension " + std::to_string(mean_.size()) +
                     ", input has " + std::to_string(rows));
  }
}

Vector FeatureNormalizer::normalize(const Vector& x) const {
  check(x.size());
  return ((x - mean_).array() / std_.array()).matrix();
}

Vector FeatureNormalizer::denormalize(const Vector& x) const {
  check(x.size());
  return (x.array() * std_.array()).matrix() + mean_;
}

Matrix FeatureNormalizer::normalize(const Matrix& x) const {
  check(x.rows());
  return ((x.colwise() - mean_).array().colwise() / std_.array()).matrix();
}

Matrix FeatureNormalizer::denormalize(const Matrix& x) const {
  check(x.rows());
  return (x.array().colwise() * std_.array()).matrix().colwise() + mean_;
}

// ---------------------------------------------------------------------------
// Demonstrations

Eigen::Index DemonstrationSet::pair_count() const {
  Eigen::Index n = 0;
  for (const auto& t : trajectories) n += t.length();
  return n;
}

Matrix DemonstrationSet::features() const {
  if (trajectories.empty()) return Matrix();
  const Eigen::Index dim =
      trajectories.front().states.rows() + trajectories.front().actions.rows();
  Matrix f(dim, pair_count());
  Eigen::Index col = 0;
  for (const auto& t : trajectories) {
    f.middleCols(col, t.length()) = t.features();
    col += t.length();
  }
  return f;
}

DemonstrationSet generate_demos(const EnvSpec& spec, const StatePolicy& expert,
                                int n_traj, std::uint64_t seed) {
  if (n_traj < 1) throw ConfigError("n_traj must be at least 1");
  DemonstrationSet demos;
  demos.env = spec.name;
  for (int i = 0; i < n_traj; ++i) {
    demos.trajectories.push_back(
        rollout(spec, expert, derive_seed(seed, static_cast<std::uint64_t>(i)))
            .trajectory);
  }
  demos.normalizer = FeatureNormalizer::fit(demos.features());
  return demos;
}

DemonstrationSet corrupt_demos(const DemonstrationSet& demos, double sigma,
                               std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
  if (sigma == 0.0) return demos;
  DemonstrationSet out = demos;
  Rng rng(mix_seed(seed));
  NormalSampler normal;
  for (auto& t : out.trajectories) {
    for (Eigen::Index c = 0; c < t.states.cols(); ++c) {
      for (Eigen::Index r = 0; r < t.states.rows(); ++r) {
        t.states(r, c) += sigma * normal(rng);
      }
      for (Eigen::Index r = 0; r < t.actions.rows(); ++r) {
        t.actions(r, c) += sigma * normal(rng);
      }
    }
    t.final_state.resize(0);
  }
  out.noise_sigma = sigma;
  out.normalizer = FeatureNormalizer::fit(out.features());
  return out;
}

}  // namespace aeail
