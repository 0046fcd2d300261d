#include "aeail/selfcheck.hpp"

#include <algorithm>
#include <functional>

#include "aeail/policy_opt.hpp"
#include "aeail/reward_models.hpp"
#include "aeail/rng.hpp"

namespace aeail {

double GradCheckReport::worst() const {
  return std::max({max_net_error, ae_w_loss_error, ae_js_loss_error,
                   vae_loss_error, disc_loss_error, surrogate_error});
}

namespace {

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, RandomStream& rs,
                       double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * rs.gaussian();
  }
  return m;
}

Vector concat(const std::vector<Vector>& parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Vector out(n);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

// Splits `flat` over `nets` in order.
void scatter(const Vector& flat, const std::vector<MlpNet*>& nets) {
  Eigen::Index at = 0;
  for (MlpNet* n : nets) {
    const Eigen::Index k = n->parameter_count();
    n->set_flat_parameters(flat.segment(at, k));
    at += k;
  }
}

double ae_check(RewardVariant variant, RandomStream& rs, std::uint64_t seed) {
  const int d = 3;
  const Matrix expert = gaussian_matrix(d, 5, rs);
  const Matrix gen = gaussian_matrix(d, 5, rs, 1.5);
  const FeatureNormalizer norm = FeatureNormalizer::fit(expert);
  AutoEncoder ae(d, 6, norm, seed);
  // Larger weights than the initialization so every term is exercised.
  ae.encoder().set_flat_parameters(
      gaussian_matrix(ae.encoder().parameter_count(), 1, rs, 0.5).col(0));
  ae.decoder().set_flat_parameters(
      gaussian_matrix(ae.decoder().parameter_count(), 1, rs, 0.5).col(0));
  const auto loss = [&](const AutoEncoder& m, AeGradients* g) {
    return variant == RewardVariant::kAeW ? loss_ae_w(m, expert, gen, g)
                                          : loss_ae_js(m, expert, gen, g);
  };
  AeGradients g;
  loss(ae, &g);
  const Vector analytic = concat({g.encoder.flatten(), g.decoder.flatten()});
  AutoEncoder probe = ae;
  const auto f = [&](const Vector& p) {
    scatter(p, {&probe.encoder(), &probe.decoder()});
    return loss(probe, nullptr);
  };
  const Vector at = concat({ae.encoder().flat_parameters(), ae.decoder().flat_parameters()});
  return max_relative_error(analytic, numeric_gradient(f, at, kGradCheckEps));
}

double vae_check(RandomStream& rs, std::uint64_t seed) {
  const int d = 3, latent = 2;
  const Matrix expert = gaussian_matrix(d, 4, rs);
  const Matrix gen = gaussian_matrix(d, 4, rs, 1.5);
  const Matrix ne = gaussian_matrix(latent, 4, rs);
  const Matrix ng = gaussian_matrix(latent, 4, rs);
  VariationalAutoEncoder vae(d, 5, latent, FeatureNormalizer::fit(expert), seed);
  VaeGradients g;
  loss_vae(vae, expert, gen, ne, ng, &g, 0.7);
  const Vector analytic = concat({g.trunk.flatten(), g.mean_head.flatten(),
                                  g.logvar_head.flatten(), g.decoder.flatten()});
  VariationalAutoEncoder probe = vae;
  const auto f = [&](const Vector& p) {
    scatter(p, {&probe.trunk(), &probe.mean_head(), &probe.logvar_head(),
                &probe.decoder()});
    return loss_vae(probe, expert, gen, ne, ng, nullptr, 0.7);
  };
  const Vector at = concat({vae.trunk().flat_parameters(), vae.mean_head().flat_parameters(),
                            vae.logvar_head().flat_parameters(),
                            vae.decoder().flat_parameters()});
  return max_relative_error(analytic, numeric_gradient(f, at, kGradCheckEps));
}

double disc_check(RandomStream& rs, std::uint64_t seed) {
  const int d = 3;
  const Matrix expert = gaussian_matrix(d, 5, rs);
  const Matrix gen = gaussian_matrix(d, 5, rs, 1.5);
  Discriminator disc(d, 4, DiscObjective::kJsd, FeatureNormalizer::fit(expert), seed);
  GradientSet g;
  disc_loss_and_reward(disc, expert, gen, &g);
  Discriminator probe = disc;
  const auto f = [&](const Vector& p) {
    probe.net().set_flat_parameters(p);
    return disc_loss_and_reward(probe, expert, gen).loss;
  };
  return max_relative_error(
      g.flatten(), numeric_gradient(f, disc.net().flat_parameters(), kGradCheckEps));
}

double surrogate_check(RandomStream& rs, std::uint64_t seed) {
  const int sd = 3, ad = 2, n = 6;
  GaussianPolicy policy(sd, ad, Vector::Constant(ad, -1.0), Vector::Constant(ad, 1.0),
                        seed, 4);
  policy.set_log_std(gaussian_matrix(ad, 1, rs, 0.3).col(0));
  PolicyBatch b;
  b.states = gaussian_matrix(sd, n, rs);
  b.actions = gaussian_matrix(ad, n, rs);
  b.old_log_probs = log_prob_batch(policy, b.states, b.actions) +
                    gaussian_matrix(n, 1, rs, 0.1).col(0);
  b.advantages = gaussian_matrix(n, 1, rs).col(0);
  Vector g;
  surrogate(policy, b, &g);
  GaussianPolicy probe = policy;
  const auto f = [&](const Vector& p) {
    probe.set_flat_parameters(p);
    return surrogate(probe, b);
  };
  return max_relative_error(
      g, numeric_gradient(f, policy.flat_parameters(), kGradCheckEps));
}

}  // namespace

GradCheckReport run_grad_checks(int n_nets, std::uint64_t seed) {
  GradCheckReport report;
  RandomStream rs(derive_seed(seed, 0));
  for (int i = 0; i < n_nets; ++i) {
    const int hidden_layers = 1 + static_cast<int>(uniform_index(rs.engine, 3));
    std::vector<int> sizes;
    for (int l = 0; l < hidden_layers + 2; ++l) {
      sizes.push_back(1 + static_cast<int>(uniform_index(rs.engine, 16)));
    }
    const Activation out =
        uniform_index(rs.engine, 2) == 0 ? Activation::kIdentity : Activation::kTanh;
    const MlpNet net(sizes, derive_seed(seed, 100 + static_cast<std::uint64_t>(i)),
                     Activation::kTanh, out);
    Vector x(sizes.front());
    for (Eigen::Index j = 0; j < x.size(); ++j) x[j] = uniform_in(rs.engine, -1.0, 1.0);
    report.max_net_error = std::max(report.max_net_error, grad_check(net, x, kGradCheckEps));
    ++report.nets_checked;
  }
  report.ae_w_loss_error = ae_check(RewardVariant::kAeW, rs, derive_seed(seed, 1));
  report.ae_js_loss_error = ae_check(RewardVariant::kAeJs, rs, derive_seed(seed, 2));
  report.vae_loss_error = vae_check(rs, derive_seed(seed, 3));
  report.disc_loss_error = disc_check(rs, derive_seed(seed, 4));
  report.surrogate_error = surrogate_check(rs, derive_seed(seed, 5));
  return report;
}

}  // namespace aeail
