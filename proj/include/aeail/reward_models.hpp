#pragma once

// Learned and stationary reward functions over concatenated (s, a) features.
// Every batch argument is column-major: one raw (unnormalized) feature
// vector per column.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string_view>

#include "aeail/diffnet.hpp"
#include "aeail/envlab.hpp"
#include "aeail/rng.hpp"

namespace aeail {

enum class RewardVariant : std::uint8_t {
  kAeW = 0,
  kAeJs = 1,
  kVae = 2,
  kDiscJsd = 3,
  kDiscFkld = 4,
  kGot = 5,
};

std::string_view to_string(RewardVariant v);
RewardVariant reward_variant_from_string(std::string_view name);
// Variants whose parameters are clipped after every update.
bool is_autoencoder_variant(RewardVariant v);

struct ClipRange {
  double lo = -0.99;
  double hi = 0.99;
};

// Floor applied to the reconstruction error before -log(1 - exp(-AE)).
inline constexpr double kJsErrorFloor = 1e-6;

// 1 / (1 + AE)
double reward_from_error_w(double error);
// -log(1 - exp(-max(AE, kJsErrorFloor)))
double reward_from_error_js(double error);

// ---------------------------------------------------------------------------
// Auto-encoder: the encoder maps normalized features to a tanh hidden layer,
// the decoder maps that layer through a second tanh layer to an identity
// output compared against the raw features.

class AutoEncoder {
 public:
  AutoEncoder(int input_dim, int hidden, FeatureNormalizer normalizer,
              std::uint64_t seed, ClipRange clip = {});
  AutoEncoder(MlpNet encoder, MlpNet decoder, FeatureNormalizer normalizer,
              ClipRange clip = {});

  int input_dim() const { return encoder_.input_dim(); }
  int hidden_dim() const { return encoder_.output_dim(); }
  MlpNet& encoder() { return encoder_; }
  const MlpNet& encoder() const { return encoder_; }
  MlpNet& decoder() { return decoder_; }
  const MlpNet& decoder() const { return decoder_; }
  const FeatureNormalizer& normalizer() const { return normalizer_; }
  ClipRange clip_range() const { return clip_; }

  Matrix reconstruct(const Matrix& raw) const;
  Vector reconstruction_errors(const Matrix& raw) const;
  // Encoder output, i.e. the first hidden layer of the whole network.
  Matrix latent(const Matrix& raw) const;

 private:
  void check(Eigen::Index rows) const;

  MlpNet encoder_;
  MlpNet decoder_;
  FeatureNormalizer normalizer_;
  ClipRange clip_;
};

double reconstruction_error(const AutoEncoder& ae, const Vector& x);
double reward_ae_w(const AutoEncoder& ae, const Vector& x);
double reward_ae_js(const AutoEncoder& ae, const Vector& x);

struct AeGradients {
  GradientSet encoder;
  GradientSet decoder;
};

// E_gen[1/(1+AE)] - E_expert[1/(1+AE)]. When `grads` is non-null the
// parameter gradient is written into it.
double loss_ae_w(const AutoEncoder& ae, const Matrix& expert,
                 const Matrix& generated, AeGradients* grads = nullptr);
// E_expert[AE] - E_gen[log(1 - exp(-AE))], AE floored at kJsErrorFloor.
double loss_ae_js(const AutoEncoder& ae, const Matrix& expert,
                  const Matrix& generated, AeGradients* grads = nullptr);

// ---------------------------------------------------------------------------
// Variational auto-encoder with a shared tanh trunk and linear mean/log-var
// heads. Log-variances are clamped to +-kVaeLogVarLimit.

inline constexpr double kVaeLogVarLimit = 10.0;

class VariationalAutoEncoder {
 public:
  VariationalAutoEncoder(int input_dim, int hidden, int latent,
                         FeatureNormalizer normalizer, std::uint64_t seed,
                         ClipRange clip = {});
  VariationalAutoEncoder(MlpNet trunk, MlpNet mean_head, MlpNet logvar_head,
                         MlpNet decoder, FeatureNormalizer normalizer,
                         ClipRange clip = {});

  int input_dim() const { return trunk_.input_dim(); }
  int latent_dim() const { return mean_head_.output_dim(); }
  MlpNet& trunk() { return trunk_; }
  const MlpNet& trunk() const { return trunk_; }
  MlpNet& mean_head() { return mean_head_; }
  const MlpNet& mean_head() const { return mean_head_; }
  MlpNet& logvar_head() { return logvar_head_; }
  const MlpNet& logvar_head() const { return logvar_head_; }
  MlpNet& decoder() { return decoder_; }
  const MlpNet& decoder() const { return decoder_; }
  const FeatureNormalizer& normalizer() const { return normalizer_; }
  ClipRange clip_range() const { return clip_; }

  struct Encoding {
    Matrix trunk;
    Matrix mean;
    Matrix logvar;  // clamped
  };
  Encoding encode(const Matrix& raw) const;
  // Closed-form KL(q(z|x) || N(0, I)) per column.
  Vector kl_to_prior(const Matrix& raw) const;
  // With `noise` empty the posterior mean is decoded, otherwise
  // z = mean + exp(logvar / 2) * noise.
  Vector reconstruction_errors(const Matrix& raw,
                               const Matrix& noise = Matrix()) const;
  Matrix latent(const Matrix& raw) const;

 private:
  void check(Eigen::Index rows) const;

  MlpNet trunk_;
  MlpNet mean_head_;
  MlpNet logvar_head_;
  MlpNet decoder_;
  FeatureNormalizer normalizer_;
  ClipRange clip_;
};

double kl_diag_gaussian_to_prior(const Vector& mean, const Vector& logvar);
double kl_to_prior(const VariationalAutoEncoder& vae, const Vector& x);

struct VaeGradients {
  GradientSet trunk;
  GradientSet mean_head;
  GradientSet logvar_head;
  GradientSet decoder;
};

// (E_gen[r] - E_expert[r]) + kl_weight (E_expert[KL] - E_gen[KL]) with
// r = 1/(1+AE) of one reparameterized sample per column. Empty noise
// matrices decode the posterior mean.
double loss_vae(const VariationalAutoEncoder& vae, const Matrix& expert,
                const Matrix& generated, const Matrix& expert_noise,
                const Matrix& generated_noise, VaeGradients* grads = nullptr,
                double kl_weight = 1.0);

// ---------------------------------------------------------------------------
// Discriminator baselines (expert labelled 1).

enum class DiscObjective : std::uint8_t { kJsd, kFkld };

class Discriminator {
 public:
  Discriminator(int input_dim, int hidden, DiscObjective objective,
                FeatureNormalizer normalizer, std::uint64_t seed);
  Discriminator(MlpNet net, DiscObjective objective,
                FeatureNormalizer normalizer);

  DiscObjective objective() const { return objective_; }
  int input_dim() const { return net_.input_dim(); }
  MlpNet& net() { return net_; }
  const MlpNet& net() const { return net_; }
  const FeatureNormalizer& normalizer() const { return normalizer_; }

  Vector logits(const Matrix& raw) const;
  Vector rewards(const Matrix& raw) const;
  Matrix latent(const Matrix& raw) const;

 private:
  MlpNet net_;
  DiscObjective objective_;
  FeatureNormalizer normalizer_;
};

double sigmoid(double logit);
// jsd: -log(1 - sigmoid(l)); fkld: exp(l) * (-l).
double disc_reward_from_logit(DiscObjective objective, double logit);

struct DiscLossAndReward {
  double loss = 0.0;
  std::function<double(const Vector&)> reward;
};

// Binary cross-entropy. The returned reward function evaluates the
// discriminator as it is at call time (it holds a copy).
DiscLossAndReward disc_loss_and_reward(const Discriminator& d,
                                       const Matrix& expert,
                                       const Matrix& generated,
                                       GradientSet* grads = nullptr);

// ---------------------------------------------------------------------------
// Greedy optimal-transport reward. Expert atoms carry weight 1/N each; every
// agent step consumes 1/T of them, nearest first.

class GotReward {
 public:
  GotReward(const Matrix& expert_features, FeatureNormalizer normalizer,
            int horizon, double alpha = 5.0, double beta = 5.0);

  void reset();
  double step(const Vector& x);

  int atom_count() const { return static_cast<int>(atoms_.cols()); }
  const Matrix& atoms() const { return atoms_; }
  const Vector& remaining() const { return remaining_; }
  double remaining_total() const { return remaining_.sum(); }
  double last_consumed() const { return last_consumed_; }
  double last_cost() const { return last_cost_; }
  double atom_weight() const { return atom_weight_; }
  double step_weight() const { return step_weight_; }
  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  const FeatureNormalizer& normalizer() const { return normalizer_; }

 private:
  Matrix atoms_;  // normalized
  FeatureNormalizer normalizer_;
  Vector remaining_;
  double atom_weight_;
  double step_weight_;
  double alpha_;
  double beta_;
  double last_consumed_ = 0.0;
  double last_cost_ = 0.0;
};

void got_reset(GotReward& g);
double got_reward_step(GotReward& g, const Vector& x);

// ---------------------------------------------------------------------------
// Absorbing-state augmentation. The augmented state is (s, flag); absorbing
// states are all-zero with flag 1 and are followed by zero actions.

Trajectory asw_augment(const Trajectory& traj, int horizon);
Trajectory asw_strip(const Trajectory& augmented);
// Inserts an unnormalized (mean 0, std 1) flag feature after the state.
FeatureNormalizer asw_augment_normalizer(const FeatureNormalizer& n,
                                         int state_dim);

// ---------------------------------------------------------------------------
// Reward models behind one interface, as used by the trainer.

class RewardModel {
 public:
  virtual ~RewardModel() = default;

  virtual RewardVariant variant() const = 0;
  virtual bool absorbing() const { return false; }
  virtual int input_dim() const = 0;
  // Loss on the batches before the update. Stationary models return their
  // nominal loss of 0 and do not change.
  virtual double update(const Matrix& expert, const Matrix& generated) = 0;
  // Current loss without a parameter change.
  virtual double loss(const Matrix& expert, const Matrix& generated) const = 0;
  // Pseudo-rewards of one episode's features, in time order.
  virtual Vector episode_rewards(const Matrix& features) = 0;
  // Throws std::logic_error for models without a hidden layer.
  virtual Matrix latent_activations(const Matrix& features) const = 0;
  virtual double max_abs_parameter() const { return 0.0; }
  virtual void write(std::ostream& os) const = 0;
  virtual std::unique_ptr<RewardModel> clone() const = 0;
};

struct RewardModelConfig {
  RewardVariant variant = RewardVariant::kAeW;
  bool absorbing = false;
  int hidden = 100;
  int vae_latent = 100;
  ClipRange clip;
  double learning_rate = 3e-4;
  std::uint64_t seed = 0;
  int horizon = 1024;
  double got_alpha = 5.0;
  double got_beta = 5.0;
};

// `expert_features` and `normalizer` describe the (already augmented, when
// absorbing) feature space.
std::unique_ptr<RewardModel> make_reward_model(const RewardModelConfig& config,
                                               const Matrix& expert_features,
                                               const FeatureNormalizer& normalizer);

// Reward checkpoints: one tag byte (variant, bit 7 set when absorbing)
// followed by the model's networks in the network checkpoint format.
// RewardModel::write emits the body only.
void write_reward_model(std::ostream& os, const RewardModel& model);
void save_reward_model(const std::filesystem::path& path,
                       const RewardModel& model);
std::unique_ptr<RewardModel> read_reward_model(
    std::istream& is, const RewardModelConfig& defaults,
    const Matrix& expert_features, const FeatureNormalizer& normalizer);
std::unique_ptr<RewardModel> load_reward_model(
    const std::filesystem::path& path, const RewardModelConfig& defaults,
    const Matrix& expert_features, const FeatureNormalizer& normalizer);

// Accessors for the concrete models held by a RewardModel, or null.
const AutoEncoder* as_autoencoder(const RewardModel& model);
const VariationalAutoEncoder* as_vae(const RewardModel& model);
const Discriminator* as_discriminator(const RewardModel& model);

}  // namespace aeail
