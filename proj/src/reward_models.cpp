#include "aeail/reward_models.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include "aeail/checkpoint.hpp"
#include "aeail/errors.hpp"

namespace aeail {

namespace {

double softplus(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

void check_batches(const Matrix& expert, const Matrix& generated, int dim) {
  if (expert.cols() == 0 || generated.cols() == 0) {
    throw DataError("reward-model loss needs non-empty expert and generated batches");
  }
  if (expert.cols() != generated.cols()) {
    throw ShapeError("expert batch has " + std::to_string(expert.cols()) +
                     " rows, generated batch has " +
                     std::to_string(generated.cols()) + "; sizes must match");
  }
  if (expert.rows() != dim || generated.rows() != dim) {
    throw ShapeError("batch feature dimension " + std::to_string(expert.rows()) +
                     "/" + std::to_string(generated.rows()) +
                     " does not match model input " + std::to_string(dim));
  }
}

// One forward pass of an auto-encoder with everything backward needs.
struct AePass {
  ForwardTape enc_tape;
  ForwardTape dec_tape;
  Matrix residual;  // reconstruction - raw
  Vector errors;
};

AePass ae_forward(const AutoEncoder& ae, const Matrix& raw) {
  AePass p;
  const Matrix h = ae.encoder().forward_batch(ae.normalizer().normalize(raw),
                                              &p.enc_tape);
  const Matrix y = ae.decoder().forward_batch(h, &p.dec_tape);
  p.residual = y - raw;
  p.errors = p.residual.colwise().squaredNorm().transpose();
  return p;
}

void ae_backward(const AutoEncoder& ae, const AePass& p,
                 const Vector& d_loss_d_error, AeGradients& grads) {
  Matrix upstream = 2.0 * p.residual;
  upstream.array().rowwise() *= d_loss_d_error.transpose().array();
  const Matrix d_hidden =
      ae.decoder().backward_batch(p.dec_tape, upstream, grads.decoder);
  ae.encoder().backward_batch(p.enc_tape, d_hidden, grads.encoder);
}

AeGradients zero_grads(const AutoEncoder& ae) {
  return AeGradients{GradientSet(ae.encoder()), GradientSet(ae.decoder())};
}

}  // namespace

std::string_view to_string(RewardVariant v) {
  switch (v) {
    case RewardVariant::kAeW:
      return "ae_w";
    case RewardVariant::kAeJs:
      return "ae_js";
    case RewardVariant::kVae:
      return "vae";
    case RewardVariant::kDiscJsd:
      return "disc_jsd";
    case RewardVariant::kDiscFkld:
      return "disc_fkld";
    case RewardVariant::kGot:
      return "got";
  }
  return "unknown";
}

RewardVariant reward_variant_from_string(std::string_view name) {
  if (name == "ae_w") return RewardVariant::kAeW;
  if (name == "ae_js") return RewardVariant::kAeJs;
  if (name == "vae") return RewardVariant::kVae;
  if (name == "disc_jsd") return RewardVariant::kDiscJsd;
  if (name == "disc_fkld") return RewardVariant::kDiscFkld;
  if (name == "got") return RewardVariant::kGot;
  throw ConfigError("unknown reward variant '" + std::string(name) +
                    "' (expected ae_w, ae_js, vae, disc_jsd, disc_fkld or got)");
}

bool is_autoencoder_variant(RewardVariant v) {
  return v == RewardVariant::kAeW || v == RewardVariant::kAeJs ||
         v == RewardVariant::kVae;
}

double reward_from_error_w(double error) { return 1.0 / (1.0 + error); }

double reward_from_error_js(double error) {
  const double e = std::max(error, kJsErrorFloor);
  return -std::log(-std::expm1(-e));
}

// ---------------------------------------------------------------------------
// AutoEncoder

AutoEncoder::AutoEncoder(int input_dim, int hidden,
                         FeatureNormalizer normalizer, std::uint64_t seed,
                         ClipRange clip)
    : encoder_({input_dim, hidden}, derive_seed(seed, 1), Activation::kTanh,
               Activation::kTanh),
      decoder_({hidden, hidden, input_dim}, derive_seed(seed, 2)),
      normalizer_(std::move(normalizer)),
      clip_(clip) {
  check(normalizer_.dim());
}

AutoEncoder::AutoEncoder(MlpNet encoder, MlpNet decoder,
                         FeatureNormalizer normalizer, ClipRange clip)
    : encoder_(std::move(encoder)),
      decoder_(std::move(decoder)),
      normalizer_(std::move(normalizer)),
      clip_(clip) {
  if (encoder_.output_dim() != decoder_.input_dim() ||
      decoder_.output_dim() != encoder_.input_dim()) {
    throw ShapeError("encoder and decoder shapes do not compose");
  }
  check(normalizer_.dim());
}

void AutoEncoder::check(Eigen::Index rows) const {
  if (rows != input_dim()) {
    throw ShapeError("auto-encoder input has dimension " +
                     std::to_string(input_dim()) + ", got " +
                     std::to_string(rows));
  }
}

Matrix AutoEncoder::reconstruct(const Matrix& raw) const {
  check(raw.rows());
  return decoder_.forward_batch(encoder_.forward_batch(normalizer_.normalize(raw)));
}

Vector AutoEncoder::reconstruction_errors(const Matrix& raw) const {
  return (reconstruct(raw) - raw).colwise().squaredNorm().transpose();
}

Matrix AutoEncoder::latent(const Matrix& raw) const {
  check(raw.rows());
  return encoder_.forward_batch(normalizer_.normalize(raw));
}

double reconstruction_error(const AutoEncoder& ae, const Vector& x) {
  return ae.reconstruction_errors(x)[0];
}

double reward_ae_w(const AutoEncoder& ae, const Vector& x) {
  return reward_from_error_w(reconstruction_error(ae, x));
}

double reward_ae_js(const AutoEncoder& ae, const Vector& x) {
  return reward_from_error_js(reconstruction_error(ae, x));
}

double loss_ae_w(const AutoEncoder& ae, const Matrix& expert,
                 const Matrix& generated, AeGradients* grads) {
  check_batches(expert, generated, ae.input_dim());
  const double ne = static_cast<double>(expert.cols());
  const double ng = static_cast<double>(generated.cols());
  const AePass pe = ae_forward(ae, expert);
  const AePass pg = ae_forward(ae, generated);
  const Vector re = (1.0 + pe.errors.array()).inverse().matrix();
  const Vector rg = (1.0 + pg.errors.array()).inverse().matrix();
  const double loss = rg.sum() / ng - re.sum() / ne;
  if (grads != nullptr) {
    *grads = zero_grads(ae);
    // d(1/(1+e))/de = -r^2
    ae_backward(ae, pg, (-rg.array().square() / ng).matrix(), *grads);
    ae_backward(ae, pe, (re.array().square() / ne).matrix(), *grads);
  }
  return loss;
}

double loss_ae_js(const AutoEncoder& ae, const Matrix& expert,
                  const Matrix& generated, AeGradients* grads) {
  check_batches(expert, generated, ae.input_dim());
  const double ne = static_cast<double>(expert.cols());
  const double ng = static_cast<double>(generated.cols());
  const AePass pe = ae_forward(ae, expert);
  const AePass pg = ae_forward(ae, generated);
  double expert_term = 0.0;
  double gen_term = 0.0;
  Vector de(pe.errors.size());
  Vector dg(pg.errors.size());
  for (Eigen::Index i = 0; i < pe.errors.size(); ++i) {
    const bool floored = pe.errors[i] < kJsErrorFloor;
    expert_term += std::max(pe.errors[i], kJsErrorFloor);
    de[i] = floored ? 0.0 : 1.0 / ne;
  }
  for (Eigen::Index i = 0; i < pg.errors.size(); ++i) {
    const bool floored = pg.errors[i] < kJsErrorFloor;
    const double e = std::max(pg.errors[i], kJsErrorFloor);
    gen_term += std::log(-std::expm1(-e));
    // d/de[-log(1 - exp(-e))] = -1 / (exp(e) - 1)
    dg[i] = floored ? 0.0 : -1.0 / (std::expm1(e) * ng);
  }
  const double loss = expert_term / ne - gen_term / ng;
  if (grads != nullptr) {
    *grads = zero_grads(ae);
    ae_backward(ae, pe, de, *grads);
    ae_backward(ae, pg, dg, *grads);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// VariationalAutoEncoder

VariationalAutoEncoder::VariationalAutoEncoder(int input_dim, int hidden,
                                               int latent,
                                               FeatureNormalizer normalizer,
                                               std::uint64_t seed,
                                               ClipRange clip)
    : trunk_({input_dim, hidden}, derive_seed(seed, 1), Activation::kTanh,
             Activation::kTanh),
      mean_head_({hidden, latent}, derive_seed(seed, 2)),
      logvar_head_({hidden, latent}, derive_seed(seed, 3)),
      decoder_({latent, hidden, input_dim}, derive_seed(seed, 4)),
      normalizer_(std::move(normalizer)),
      clip_(clip) {
  check(normalizer_.dim());
}

VariationalAutoEncoder::VariationalAutoEncoder(MlpNet trunk, MlpNet mean_head,
                                               MlpNet logvar_head,
                                               MlpNet decoder,
                                               FeatureNormalizer normalizer,
                                               ClipRange clip)
    : trunk_(std::move(trunk)),
      mean_head_(std::move(mean_head)),
      logvar_head_(std::move(logvar_head)),
      decoder_(std::move(decoder)),
      normalizer_(std::move(normalizer)),
      clip_(clip) {
  if (trunk_.output_dim() != mean_head_.input_dim() ||
      trunk_.output_dim() != logvar_head_.input_dim() ||
      mean_head_.output_dim() != logvar_head_.output_dim() ||
      mean_head_.output_dim() != decoder_.input_dim() ||
      decoder_.output_dim() != trunk_.input_dim()) {
    throw ShapeError("variational auto-encoder networks do not compose");
  }
  check(normalizer_.dim());
}

void VariationalAutoEncoder::check(Eigen::Index rows) const {
  if (rows != input_dim()) {
    throw ShapeError("variational auto-encoder input has dimension " +
                     std::to_string(input_dim()) + ", got " +
                     std::to_string(rows));
  }
}

VariationalAutoEncoder::Encoding VariationalAutoEncoder::encode(
    const Matrix& raw) const {
  check(raw.rows());
  Encoding e;
  e.trunk = trunk_.forward_batch(normalizer_.normalize(raw));
  e.mean = mean_head_.forward_batch(e.trunk);
  e.logvar = logvar_head_.forward_batch(e.trunk)
                 .cwiseMax(-kVaeLogVarLimit)
                 .cwiseMin(kVaeLogVarLimit);
  return e;
}

Vector VariationalAutoEncoder::kl_to_prior(const Matrix& raw) const {
  const Encoding e = encode(raw);
  Vector kl(raw.cols());
  for (Eigen::Index i = 0; i < raw.cols(); ++i) {
    kl[i] = kl_diag_gaussian_to_prior(e.mean.col(i), e.logvar.col(i));
  }
  return kl;
}

Vector VariationalAutoEncoder::reconstruction_errors(const Matrix& raw,
                                                     const Matrix& noise) const {
  const Encoding e = encode(raw);
  Matrix z = e.mean;
  if (noise.size() > 0) {
    if (noise.rows() != z.rows() || noise.cols() != z.cols()) {
      throw ShapeError("noise matrix does not match the latent batch");
    }
    z.array() += (0.5 * e.logvar.array()).exp() * noise.array();
  }
  return (decoder_.forward_batch(z) - raw).colwise().squaredNorm().transpose();
}

Matrix VariationalAutoEncoder::latent(const Matrix& raw) const {
  check(raw.rows());
  return trunk_.forward_batch(normalizer_.normalize(raw));
}

double kl_diag_gaussian_to_prior(const Vector& mean, const Vector& logvar) {
  if (mean.size() != logvar.size()) {
    throw ShapeError("mean and log-variance differ in length");
  }
  return 0.5 * (mean.array().square() + logvar.array().exp() - 1.0 -
                logvar.array())
                   .sum();
}

double kl_to_prior(const VariationalAutoEncoder& vae, const Vector& x) {
  return vae.kl_to_prior(x)[0];
}

namespace {

struct VaePass {
  ForwardTape trunk_tape;
  ForwardTape mean_tape;
  ForwardTape logvar_tape;
  ForwardTape dec_tape;
  Matrix mean;
  Matrix logvar;       // clamped
  Matrix logvar_mask;  // 1 where the clamp is inactive
  Matrix noise;        // empty for posterior-mean decoding
  Matrix residual;
  Vector errors;
  Vector kl;
};

VaePass vae_forward(const VariationalAutoEncoder& vae, const Matrix& raw,
                    const Matrix& noise) {
  VaePass p;
  const Matrix t = vae.trunk().forward_batch(vae.normalizer().normalize(raw),
                                             &p.trunk_tape);
  p.mean = vae.mean_head().forward_batch(t, &p.mean_tape);
  const Matrix lv = vae.logvar_head().forward_batch(t, &p.logvar_tape);
  p.logvar = lv.cwiseMax(-kVaeLogVarLimit).cwiseMin(kVaeLogVarLimit);
  p.logvar_mask = (lv.array().abs() < kVaeLogVarLimit).cast<double>().matrix();
  Matrix z = p.mean;
  if (noise.size() > 0) {
    if (noise.rows() != z.rows() || noise.cols() != z.cols()) {
      throw ShapeError("noise matrix is " + std::to_string(noise.rows()) + "x" +
                       std::to_string(noise.cols()) + ", latent batch is " +
                       std::to_string(z.rows()) + "x" + std::to_string(z.cols()));
    }
    p.noise = noise;
    z.array() += (0.5 * p.logvar.array()).exp() * noise.array();
  }
  const Matrix y = vae.decoder().forward_batch(z, &p.dec_tape);
  p.residual = y - raw;
  p.errors = p.residual.colwise().squaredNorm().transpose();
  p.kl = (0.5 * (p.mean.array().square() + p.logvar.array().exp() - 1.0 -
                 p.logvar.array()))
             .colwise()
             .sum()
             .transpose();
  return p;
}

// d_error: dL/dAE per column; d_kl: dL/dKL per column.
void vae_backward(const VariationalAutoEncoder& vae, const VaePass& p,
                  const Vector& d_error, const Vector& d_kl, VaeGradients& g) {
  Matrix upstream = 2.0 * p.residual;
  upstream.array().rowwise() *= d_error.transpose().array();
  const Matrix dz = vae.decoder().backward_batch(p.dec_tape, upstream, g.decoder);

  Matrix d_mean = dz;
  Matrix kl_mean = p.mean;
  kl_mean.array().rowwise() *= d_kl.transpose().array();
  d_mean += kl_mean;

  Matrix d_logvar = 0.5 * (p.logvar.array().exp() - 1.0).matrix();
  d_logvar.array().rowwise() *= d_kl.transpose().array();
  if (p.noise.size() > 0) {
    d_logvar.array() +=
        dz.array() * 0.5 * (0.5 * p.logvar.array()).exp() * p.noise.array();
  }
  d_logvar.array() *= p.logvar_mask.array();

  Matrix d_trunk =
      vae.mean_head().backward_batch(p.mean_tape, d_mean, g.mean_head);
  d_trunk += vae.logvar_head().backward_batch(p.logvar_tape, d_logvar,
                                              g.logvar_head);
  vae.trunk().backward_batch(p.trunk_tape, d_trunk, g.trunk);
}

}  // namespace

double loss_vae(const VariationalAutoEncoder& vae, const Matrix& expert,
                const Matrix& generated, const Matrix& expert_noise,
                const Matrix& generated_noise, VaeGradients* grads,
                double kl_weight) {
  check_batches(expert, generated, vae.input_dim());
  const double ne = static_cast<double>(expert.cols());
  const double ng = static_cast<double>(generated.cols());
  const VaePass pe = vae_forward(vae, expert, expert_noise);
  const VaePass pg = vae_forward(vae, generated, generated_noise);
  const Vector re = (1.0 + pe.errors.array()).inverse().matrix();
  const Vector rg = (1.0 + pg.errors.array()).inverse().matrix();
  const double loss = rg.sum() / ng - re.sum() / ne +
                      kl_weight * (pe.kl.sum() / ne - pg.kl.sum() / ng);
  if (grads != nullptr) {
    *grads = VaeGradients{GradientSet(vae.trunk()), GradientSet(vae.mean_head()),
                          GradientSet(vae.logvar_head()),
                          GradientSet(vae.decoder())};
    vae_backward(vae, pe, (re.array().square() / ne).matrix(),
                 Vector::Constant(pe.kl.size(), kl_weight / ne), *grads);
    vae_backward(vae, pg, (-rg.array().square() / ng).matrix(),
                 Vector::Constant(pg.kl.size(), -kl_weight / ng), *grads);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(int input_dim, int hidden, DiscObjective objective,
                             FeatureNormalizer normalizer, std::uint64_t seed)
    : net_({input_dim, hidden, hidden, 1}, derive_seed(seed, 1)),
      objective_(objective),
      normalizer_(std::move(normalizer)) {
  if (normalizer_.dim() != input_dim) {
    throw ShapeError("discriminator normalizer dimension mismatch");
  }
}

Discriminator::Discriminator(MlpNet net, DiscObjective objective,
                             FeatureNormalizer normalizer)
    : net_(std::move(net)), objective_(objective),
      normalizer_(std::move(normalizer)) {
  if (net_.output_dim() != 1) {
    throw ShapeError("discriminator network must have one output");
  }
  if (normalizer_.dim() != net_.input_dim()) {
    throw ShapeError("discriminator normalizer dimension mismatch");
  }
}

Vector Discriminator::logits(const Matrix& raw) const {
  return net_.forward_batch(normalizer_.normalize(raw)).row(0).transpose();
}

Vector Discriminator::rewards(const Matrix& raw) const {
  const Vector l = logits(raw);
  Vector r(l.size());
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    r[i] = disc_reward_from_logit(objective_, l[i]);
  }
  return r;
}

Matrix Discriminator::latent(const Matrix& raw) const {
  return net_.hidden_activations(normalizer_.normalize(raw), 0);
}

double sigmoid(double logit) {
  if (logit >= 0.0) return 1.0 / (1.0 + std::exp(-logit));
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

double disc_reward_from_logit(DiscObjective objective, double logit) {
  if (objective == DiscObjective::kJsd) return softplus(logit);
  return std::exp(logit) * (-logit);
}

DiscLossAndReward disc_loss_and_reward(const Discriminator& d,
                                       const Matrix& expert,
                                       const Matrix& generated,
                                       GradientSet* grads) {
  check_batches(expert, generated, d.input_dim());
  // Mean binary cross-entropy over the pooled batch.
  const double n = static_cast<double>(expert.cols() + generated.cols());
  ForwardTape te, tg;
  const Matrix le = d.net().forward_batch(d.normalizer().normalize(expert), &te);
  const Matrix lg =
      d.net().forward_batch(d.normalizer().normalize(generated), &tg);
  double loss = 0.0;
  Matrix ue(1, le.cols()), ug(1, lg.cols());
  for (Eigen::Index i = 0; i < le.cols(); ++i) {
    loss += softplus(-le(0, i)) / n;  // -log sigmoid
    ue(0, i) = (sigmoid(le(0, i)) - 1.0) / n;
  }
  for (Eigen::Index i = 0; i < lg.cols(); ++i) {
    loss += softplus(lg(0, i)) / n;  // -log(1 - sigmoid)
    ug(0, i) = sigmoid(lg(0, i)) / n;
  }
  if (grads != nullptr) {
    *grads = GradientSet(d.net());
    d.net().backward_batch(te, ue, *grads);
    d.net().backward_batch(tg, ug, *grads);
  }
  DiscLossAndReward out;
  out.loss = loss;
  out.reward = [snapshot = d](const Vector& x) {
    return snapshot.rewards(x)[0];
  };
  return out;
}

// ---------------------------------------------------------------------------
// GOT

namespace {
constexpr double kLedgerTolerance = 1e-12;
}

GotReward::GotReward(const Matrix& expert_features,
                     FeatureNormalizer normalizer, int horizon, double alpha,
                     double beta)
    : normalizer_(std::move(normalizer)), alpha_(alpha), beta_(beta) {
  if (expert_features.cols() == 0) {
    throw DataError("greedy transport reward needs expert atoms");
  }
  if (horizon < 1) throw ConfigError("horizon must be positive");
  if (!(alpha > 0.0) || !(beta > 0.0)) {
    throw ConfigError("GOT alpha and beta must be positive");
  }
  atoms_ = normalizer_.normalize(expert_features);
  atom_weight_ = 1.0 / static_cast<double>(expert_features.cols());
  step_weight_ = 1.0 / static_cast<double>(horizon);
  reset();
}

void GotReward::reset() {
  remaining_ = Vector::Constant(atoms_.cols(), atom_weight_);
  last_consumed_ = 0.0;
  last_cost_ = 0.0;
}

double GotReward::step(const Vector& x) {
  const Vector xn = normalizer_.normalize(x);
  const Vector dist = (atoms_.colwise() - xn).colwise().norm().transpose();
  double to_consume = step_weight_;
  double cost = 0.0;
  double consumed = 0.0;
  while (to_consume > kLedgerTolerance * step_weight_) {
    Eigen::Index best = -1;
    for (Eigen::Index k = 0; k < atoms_.cols(); ++k) {
      if (remaining_[k] > 0.0 && (best < 0 || dist[k] < dist[best])) best = k;
    }
    if (best < 0) break;
    const double take = std::min(to_consume, remaining_[best]);
    remaining_[best] -= take;
    if (remaining_[best] <= kLedgerTolerance * atom_weight_) remaining_[best] = 0.0;
    to_consume -= take;
    consumed += take;
    cost += take * dist[best];
  }
  last_consumed_ = consumed;
  last_cost_ = cost / step_weight_;
  if (consumed == 0.0) return 0.0;
  return alpha_ * std::exp(-beta_ * last_cost_);
}

void got_reset(GotReward& g) { g.reset(); }
double got_reward_step(GotReward& g, const Vector& x) { return g.step(x); }

// ---------------------------------------------------------------------------
// Absorbing states

Trajectory asw_augment(const Trajectory& traj, int horizon) {
  const Eigen::Index sd = traj.states.rows();
  const Eigen::Index ad = traj.actions.rows();
  const Eigen::Index live = traj.length();
  const Eigen::Index pad =
      traj.terminated() ? std::max<Eigen::Index>(0, horizon - live) : 0;
  Trajectory out;
  out.states = Matrix::Zero(sd + 1, live + pad);
  out.actions = Matrix::Zero(ad, live + pad);
  out.states.topLeftCorner(sd, live) = traj.states;
  out.actions.leftCols(live) = traj.actions;
  out.states.bottomRightCorner(1, pad).setOnes();
  out.dones = traj.dones;
  out.dones.resize(static_cast<std::size_t>(live + pad), true);
  if (traj.final_state.size() == sd) {
    out.final_state = Vector::Zero(sd + 1);
    if (pad > 0) {
      out.final_state[sd] = 1.0;
    } else {
      out.final_state.head(sd) = traj.final_state;
    }
  }
  return out;
}

Trajectory asw_strip(const Trajectory& augmented) {
  const Eigen::Index sd = augmented.states.rows() - 1;
  if (sd < 1) throw ShapeError("trajectory has no absorbing flag row");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index t = 0; t < augmented.length(); ++t) {
    if (augmented.states(sd, t) == 0.0) keep.push_back(t);
  }
  Trajectory out;
  out.states.resize(sd, static_cast<Eigen::Index>(keep.size()));
  out.actions.resize(augmented.actions.rows(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    out.states.col(c) = augmented.states.col(keep[i]).head(sd);
    out.actions.col(c) = augmented.actions.col(keep[i]);
    out.dones.push_back(augmented.dones[static_cast<std::size_t>(keep[i])]);
  }
  return out;
}

FeatureNormalizer asw_augment_normalizer(const FeatureNormalizer& n,
                                         int state_dim) {
  const int d = n.dim();
  if (state_dim < 0 || state_dim > d) throw ShapeError("bad state dimension");
  Vector mean(d + 1), std(d + 1);
  mean.head(state_dim) = n.mean().head(state_dim);
  std.head(state_dim) = n.std().head(state_dim);
  mean[state_dim] = 0.0;
  std[state_dim] = 1.0;
  mean.tail(d - state_dim) = n.mean().tail(d - state_dim);
  std.tail(d - state_dim) = n.std().tail(d - state_dim);
  return FeatureNormalizer(mean, std);
}

// ---------------------------------------------------------------------------
// RewardModel implementations

namespace {

void adam_step_clipped(MlpNet& net, OptimizerState& opt, const GradientSet& g,
                       const ClipRange* clip) {
  optimizer_step(net, opt, g);
  if (clip != nullptr) clip_params(net, clip->lo, clip->hi);
}

class AeRewardModel final : public RewardModel {
 public:
  AeRewardModel(RewardVariant variant, AutoEncoder ae, double lr)
      : variant_(variant), ae_(std::move(ae)),
        enc_opt_(OptimizerState::adam(lr)), dec_opt_(OptimizerState::adam(lr)) {}

  RewardVariant variant() const override { return variant_; }
  int input_dim() const override { return ae_.input_dim(); }

  double loss(const Matrix& expert, const Matrix& generated) const override {
    return variant_ == RewardVariant::kAeW ? loss_ae_w(ae_, expert, generated)
                                           : loss_ae_js(ae_, expert, generated);
  }

  double update(const Matrix& expert, const Matrix& generated) override {
    AeGradients g;
    const double value = variant_ == RewardVariant::kAeW
                             ? loss_ae_w(ae_, expert, generated, &g)
                             : loss_ae_js(ae_, expert, generated, &g);
    if (!std::isfinite(value)) throw NumericFault("auto-encoder loss is not finite");
    const ClipRange clip = ae_.clip_range();
    adam_step_clipped(ae_.encoder(), enc_opt_, g.encoder, &clip);
    adam_step_clipped(ae_.decoder(), dec_opt_, g.decoder, &clip);
    return value;
  }

  Vector episode_rewards(const Matrix& features) override {
    const Vector err = ae_.reconstruction_errors(features);
    Vector r(err.size());
    for (Eigen::Index i = 0; i < err.size(); ++i) {
      r[i] = variant_ == RewardVariant::kAeW ? reward_from_error_w(err[i])
                                             : reward_from_error_js(err[i]);
    }
    return r;
  }

  Matrix latent_activations(const Matrix& features) const override {
    return ae_.latent(features);
  }

  double max_abs_parameter() const override {
    return std::max(aeail::max_abs_parameter(ae_.encoder()),
                    aeail::max_abs_parameter(ae_.decoder()));
  }

  void write(std::ostream& os) const override {
    write_net(os, ae_.encoder());
    write_net(os, ae_.decoder());
  }

  std::unique_ptr<RewardModel> clone() const override {
    return std::make_unique<AeRewardModel>(*this);
  }

  const AutoEncoder& autoencoder() const { return ae_; }

 private:
  RewardVariant variant_;
  AutoEncoder ae_;
  OptimizerState enc_opt_;
  OptimizerState dec_opt_;
};

class VaeRewardModel final : public RewardModel {
 public:
  VaeRewardModel(VariationalAutoEncoder vae, double lr, std::uint64_t seed)
      : vae_(std::move(vae)), rng_(derive_seed(seed, 99)),
        opts_{OptimizerState::adam(lr), OptimizerState::adam(lr),
              OptimizerState::adam(lr), OptimizerState::adam(lr)} {}

  RewardVariant variant() const override { return RewardVariant::kVae; }
  int input_dim() const override { return vae_.input_dim(); }

  double loss(const Matrix& expert, const Matrix& generated) const override {
    return loss_vae(vae_, expert, generated, Matrix(), Matrix());
  }

  double update(const Matrix& expert, const Matrix& generated) override {
    const Matrix ne = sample_noise(expert.cols());
    const Matrix ng = sample_noise(generated.cols());
    VaeGradients g;
    const double value = loss_vae(vae_, expert, generated, ne, ng, &g);
    if (!std::isfinite(value)) throw NumericFault("VAE loss is not finite");
    const ClipRange clip = vae_.clip_range();
    adam_step_clipped(vae_.trunk(), opts_[0], g.trunk, &clip);
    adam_step_clipped(vae_.mean_head(), opts_[1], g.mean_head, &clip);
    adam_step_clipped(vae_.logvar_head(), opts_[2], g.logvar_head, &clip);
    adam_step_clipped(vae_.decoder(), opts_[3], g.decoder, &clip);
    return value;
  }

  Vector episode_rewards(const Matrix& features) override {
    const Vector err = vae_.reconstruction_errors(features);
    return (1.0 + err.array()).inverse().matrix();
  }

  Matrix latent_activations(const Matrix& features) const override {
    return vae_.latent(features);
  }

  double max_abs_parameter() const override {
    return std::max({aeail::max_abs_parameter(vae_.trunk()),
                     aeail::max_abs_parameter(vae_.mean_head()),
                     aeail::max_abs_parameter(vae_.logvar_head()),
                     aeail::max_abs_parameter(vae_.decoder())});
  }

  void write(std::ostream& os) const override {
    write_net(os, vae_.trunk());
    write_net(os, vae_.mean_head());
    write_net(os, vae_.logvar_head());
    write_net(os, vae_.decoder());
  }

  std::unique_ptr<RewardModel> clone() const override {
    return std::make_unique<VaeRewardModel>(*this);
  }

  const VariationalAutoEncoder& vae() const { return vae_; }

 private:
  Matrix sample_noise(Eigen::Index n) {
    Matrix m(vae_.latent_dim(), n);
    for (Eigen::Index c = 0; c < n; ++c) {
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = normal_(rng_);
    }
    return m;
  }

  VariationalAutoEncoder vae_;
  Rng rng_;
  NormalSampler normal_;
  OptimizerState opts_[4];
};

class DiscRewardModel final : public RewardModel {
 public:
  DiscRewardModel(Discriminator d, double lr)
      : d_(std::move(d)), opt_(OptimizerState::adam(lr)) {}

  RewardVariant variant() const override {
    return d_.objective() == DiscObjective::kJsd ? RewardVariant::kDiscJsd
                                                 : RewardVariant::kDiscFkld;
  }
  int input_dim() const override { return d_.input_dim(); }

  double loss(const Matrix& expert, const Matrix& generated) const override {
    return disc_loss_and_reward(d_, expert, generated).loss;
  }

  double update(const Matrix& expert, const Matrix& generated) override {
    GradientSet g;
    const double value = disc_loss_and_reward(d_, expert, generated, &g).loss;
    if (!std::isfinite(value)) {
      throw NumericFault("discriminator loss is not finite");
    }
    optimizer_step(d_.net(), opt_, g);
    return value;
  }

  Vector episode_rewards(const Matrix& features) override {
    return d_.rewards(features);
  }

  Matrix latent_activations(const Matrix& features) const override {
    return d_.latent(features);
  }

  double max_abs_parameter() const override {
    return aeail::max_abs_parameter(d_.net());
  }

  void write(std::ostream& os) const override { write_net(os, d_.net()); }

  std::unique_ptr<RewardModel> clone() const override {
    return std::make_unique<DiscRewardModel>(*this);
  }

  const Discriminator& discriminator() const { return d_; }

 private:
  Discriminator d_;
  OptimizerState opt_;
};

class GotRewardModel final : public RewardModel {
 public:
  explicit GotRewardModel(GotReward got) : got_(std::move(got)) {}

  RewardVariant variant() const override { return RewardVariant::kGot; }
  int input_dim() const override { return got_.normalizer().dim(); }
  double loss(const Matrix& e, const Matrix& g) const override {
    check_batches(e, g, input_dim());
    return 0.0;
  }
  double update(const Matrix& e, const Matrix& g) override { return loss(e, g); }

  Vector episode_rewards(const Matrix& features) override {
    got_.reset();
    Vector r(features.cols());
    for (Eigen::Index t = 0; t < features.cols(); ++t) {
      r[t] = got_.step(features.col(t));
    }
    return r;
  }

  Matrix latent_activations(const Matrix&) const override {
    throw std::logic_error("the greedy transport reward has no latent layer");
  }

  void write(std::ostream&) const override {}

  std::unique_ptr<RewardModel> clone() const override {
    return std::make_unique<GotRewardModel>(*this);
  }

 private:
  GotReward got_;
};

// Marks a model as operating on absorbing-augmented features. The
// augmentation itself happens on trajectories (asw_augment); this wrapper
// forwards everything to the inner model.
class AbsorbingWrapper final : public RewardModel {
 public:
  explicit AbsorbingWrapper(std::unique_ptr<RewardModel> inner)
      : inner_(std::move(inner)) {}
  AbsorbingWrapper(const AbsorbingWrapper& other)
      : RewardModel(other), inner_(other.inner_->clone()) {}

  RewardVariant variant() const override { return inner_->variant(); }
  bool absorbing() const override { return true; }
  int input_dim() const override { return inner_->input_dim(); }
  double loss(const Matrix& e, const Matrix& g) const override {
    return inner_->loss(e, g);
  }
  double update(const Matrix& e, const Matrix& g) override {
    return inner_->update(e, g);
  }
  Vector episode_rewards(const Matrix& f) override {
    return inner_->episode_rewards(f);
  }
  Matrix latent_activations(const Matrix& f) const override {
    return inner_->latent_activations(f);
  }
  double max_abs_parameter() const override {
    return inner_->max_abs_parameter();
  }
  void write(std::ostream& os) const override { inner_->write(os); }
  std::unique_ptr<RewardModel> clone() const override {
    return std::make_unique<AbsorbingWrapper>(*this);
  }

  const RewardModel& inner() const { return *inner_; }

 private:
  std::unique_ptr<RewardModel> inner_;
};

const RewardModel& unwrap(const RewardModel& model) {
  if (const auto* w = dynamic_cast<const AbsorbingWrapper*>(&model)) {
    return w->inner();
  }
  return model;
}

std::unique_ptr<RewardModel> wrap(std::unique_ptr<RewardModel> m,
                                  bool absorbing) {
  if (!absorbing) return m;
  return std::make_unique<AbsorbingWrapper>(std::move(m));
}

}  // namespace

std::unique_ptr<RewardModel> make_reward_model(
    const RewardModelConfig& config, const Matrix& expert_features,
    const FeatureNormalizer& normalizer) {
  const int dim = normalizer.dim();
  if (expert_features.size() > 0 && expert_features.rows() != dim) {
    throw ShapeError("expert features do not match the normalizer dimension");
  }
  if (config.hidden < 1) throw ConfigError("reward hidden size must be positive");
  std::unique_ptr<RewardModel> m;
  switch (config.variant) {
    case RewardVariant::kAeW:
    case RewardVariant::kAeJs:
      m = std::make_unique<AeRewardModel>(
          config.variant,
          AutoEncoder(dim, config.hidden, normalizer, config.seed, config.clip),
          config.learning_rate);
      break;
    case RewardVariant::kVae:
      m = std::make_unique<VaeRewardModel>(
          VariationalAutoEncoder(dim, config.hidden, config.vae_latent,
                                 normalizer, config.seed, config.clip),
          config.learning_rate, config.seed);
      break;
    case RewardVariant::kDiscJsd:
    case RewardVariant::kDiscFkld:
      m = std::make_unique<DiscRewardModel>(
          Discriminator(dim, config.hidden,
                        config.variant == RewardVariant::kDiscJsd
                            ? DiscObjective::kJsd
                            : DiscObjective::kFkld,
                        normalizer, config.seed),
          config.learning_rate);
      break;
    case RewardVariant::kGot:
      m = std::make_unique<GotRewardModel>(GotReward(
          expert_features, normalizer, config.horizon, config.got_alpha,
          config.got_beta));
      break;
  }
  return wrap(std::move(m), config.absorbing);
}

void write_reward_model(std::ostream& os, const RewardModel& model) {
  std::uint8_t tag = static_cast<std::uint8_t>(model.variant());
  if (model.absorbing()) tag |= 0x80;
  write_u8(os, tag);
  model.write(os);
}

void save_reward_model(const std::filesystem::path& path,
                       const RewardModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_reward_model(os, model);
}

std::unique_ptr<RewardModel> read_reward_model(
    std::istream& is, const RewardModelConfig& defaults,
    const Matrix& expert_features, const FeatureNormalizer& normalizer) {
  const std::uint8_t tag = read_u8(is);
  const bool absorbing = (tag & 0x80) != 0;
  const std::uint8_t raw_variant = tag & 0x7f;
  if (raw_variant > static_cast<std::uint8_t>(RewardVariant::kGot)) {
    throw DataError("unknown reward-model tag " + std::to_string(raw_variant));
  }
  const auto variant = static_cast<RewardVariant>(raw_variant);
  std::unique_ptr<RewardModel> m;
  switch (variant) {
    case RewardVariant::kAeW:
    case RewardVariant::kAeJs: {
      MlpNet enc = read_net(is, Activation::kTanh, Activation::kTanh);
      MlpNet dec = read_net(is);
      m = std::make_unique<AeRewardModel>(
          variant, AutoEncoder(std::move(enc), std::move(dec), normalizer,
                               defaults.clip),
          defaults.learning_rate);
      break;
    }
    case RewardVariant::kVae: {
      MlpNet trunk = read_net(is, Activation::kTanh, Activation::kTanh);
      MlpNet mean = read_net(is);
      MlpNet logvar = read_net(is);
      MlpNet dec = read_net(is);
      m = std::make_unique<VaeRewardModel>(
          VariationalAutoEncoder(std::move(trunk), std::move(mean),
                                 std::move(logvar), std::move(dec), normalizer,
                                 defaults.clip),
          defaults.learning_rate, defaults.seed);
      break;
    }
    case RewardVariant::kDiscJsd:
    case RewardVariant::kDiscFkld:
      m = std::make_unique<DiscRewardModel>(
          Discriminator(read_net(is),
                        variant == RewardVariant::kDiscJsd ? DiscObjective::kJsd
                                                           : DiscObjective::kFkld,
                        normalizer),
          defaults.learning_rate);
      break;
    case RewardVariant::kGot:
      m = std::make_unique<GotRewardModel>(
          GotReward(expert_features, normalizer, defaults.horizon,
                    defaults.got_alpha, defaults.got_beta));
      break;
  }
  return wrap(std::move(m), absorbing);
}

std::unique_ptr<RewardModel> load_reward_model(
    const std::filesystem::path& path, const RewardModelConfig& defaults,
    const Matrix& expert_features, const FeatureNormalizer& normalizer) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  return read_reward_model(is, defaults, expert_features, normalizer);
}

const AutoEncoder* as_autoencoder(const RewardModel& model) {
  const auto* m = dynamic_cast<const AeRewardModel*>(&unwrap(model));
  return m != nullptr ? &m->autoencoder() : nullptr;
}

const VariationalAutoEncoder* as_vae(const RewardModel& model) {
  const auto* m = dynamic_cast<const VaeRewardModel*>(&unwrap(model));
  return m != nullptr ? &m->vae() : nullptr;
}

const Discriminator* as_discriminator(const RewardModel& model) {
  const auto* m = dynamic_cast<const DiscRewardModel*>(&unwrap(model));
  return m != nullptr ? &m->discriminator() : nullptr;
}

}  // namespace aeail
