#pragma once

// Toy continuous-control environments, scripted experts, demonstrations and
// feature normalization.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "aeail/diffnet.hpp"

namespace aeail {

enum class EnvName : std::uint8_t { kPointMass2d, kPendulum, kCartPoleCont };

std::string_view to_string(EnvName name);
EnvName env_name_from_string(std::string_view name);

struct EnvSpec {
  EnvName name = EnvName::kPointMass2d;
  int state_dim = 4;
  int action_dim = 2;
  Vector action_low;
  Vector action_high;
  int horizon = 1024;
  double dt = 0.05;

  // pointmass2d
  Vector goal;
  double action_cost = 0.01;
  // pendulum: uniform rod, angle 0 is upright
  double gravity = 9.81;
  double mass = 1.0;
  double length = 1.0;
  double max_speed = 8.0;
  // cartpole_cont
  double cart_mass = 1.0;
  double pole_mass = 0.1;
  double pole_half_length = 0.5;
  double angle_limit = 0.2;
  double position_limit = 2.4;

  // Test hook: every Transition reports a NaN true_reward.
  bool poison_true_reward = false;

  int feature_dim() const { return state_dim + action_dim; }
};

EnvSpec make_env_spec(EnvName name);
EnvSpec make_env_spec(std::string_view name);

// Half-widths of the box env_reset draws from, around the nominal start.
Vector reset_box_half_width(const EnvSpec& spec);
Vector nominal_start(const EnvSpec& spec);

struct Transition {
  Vector s;
  Vector a;
  Vector s_next;
  bool done = false;
  // Evaluation only. The learner-facing Trajectory has no reward field.
  double true_reward = 0.0;
};

Vector env_reset(const EnvSpec& spec, std::uint64_t seed);
// Actions outside the bounds are clipped. Throws NumericFault on a
// non-finite successor state.
Transition env_step(const EnvSpec& spec, const Vector& s, const Vector& a);
Vector clip_action(const EnvSpec& spec, const Vector& a);

using StatePolicy = std::function<Vector(const Vector&)>;

StatePolicy scripted_expert(const EnvSpec& spec);

// Discrete-time LQR gain K (u = -K x) by Riccati iteration.
Matrix solve_dlqr(const Matrix& a, const Matrix& b, const Matrix& q,
                  const Matrix& r, int max_iters = 100000, double tol = 1e-12);

// Learner-facing trajectory. Columns are time steps. `final_state` is the
// successor of the last step (used to bootstrap truncated rollouts); it is
// not part of the demonstration file format and may be empty.
struct Trajectory {
  Matrix states;   // state_dim x T
  Matrix actions;  // action_dim x T
  std::vector<bool> dones;
  Vector final_state;

  int length() const { return static_cast<int>(states.cols()); }
  bool terminated() const { return !dones.empty() && dones.back(); }
  // (state_dim + action_dim) x T
  Matrix features() const;
  bool operator==(const Trajectory& other) const;
};

struct RolloutResult {
  Trajectory trajectory;
  std::vector<double> true_rewards;
  double true_return() const;
};

// Runs until `done` or the horizon.
RolloutResult rollout(const EnvSpec& spec, const StatePolicy& policy,
                      std::uint64_t seed);

class FeatureNormalizer {
 public:
  static constexpr double kStdFloor = 1e-6;

  FeatureNormalizer() = default;
  FeatureNormalizer(Vector mean, Vector std);
  static FeatureNormalizer identity(int dim);
  // Per-row mean and population std over the columns of `features`.
  static FeatureNormalizer fit(const Matrix& features);

  const Vector& mean() const { return mean_; }
  const Vector& std() const { return std_; }
  int dim() const { return static_cast<int>(mean_.size()); }

  Vector normalize(const Vector& x) const;
  Vector denormalize(const Vector& x) const;
  Matrix normalize(const Matrix& x) const;
  Matrix denormalize(const Matrix& x) const;

  bool operator==(const FeatureNormalizer& other) const = default;

 private:
  void check(Eigen::Index rows) const;

  Vector mean_;
  Vector std_;
};

struct DemonstrationSet {
  EnvName env = EnvName::kPointMass2d;
  std::vector<Trajectory> trajectories;
  double noise_sigma = 0.0;
  FeatureNormalizer normalizer;

  // Every (s, a) pair, one per column.
  Matrix features() const;
  Eigen::Index pair_count() const;
};

DemonstrationSet generate_demos(const EnvSpec& spec, const StatePolicy& expert,
                                int n_traj, std::uint64_t seed);

DemonstrationSet corrupt_demos(const DemonstrationSet& demos, double sigma,
                               std::uint64_t seed);

// JSON-lines demonstration files: a header object, then one object per
// trajectory. Doubles are written with 17 significant digits.
inline constexpr int kDemoFormatVersion = 1;
void write_demos(std::ostream& os, const DemonstrationSet& demos,
                 const EnvSpec& spec);
DemonstrationSet read_demos(std::istream& is);
void save_demos(const std::filesystem::path& path,
                const DemonstrationSet& demos, const EnvSpec& spec);
DemonstrationSet load_demos(const std::filesystem::path& path);

}  // namespace aeail
