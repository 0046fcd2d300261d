#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "aeail/errors.hpp"
#include "aeail/reward_models.hpp"
#include "aeail/rng.hpp"

using namespace aeail;

namespace {

// 1-D auto-encoder whose decoder always outputs `out`, so AE(x) = (x - out)^2.
AutoEncoder constant_output_ae(double out, int hidden = 3) {
  MlpNet enc({1, hidden}, 1, Activation::kTanh, Activation::kTanh);
  MlpNet dec({hidden, hidden, 1}, 2);
  for (auto& w : dec.weights()) w.setZero();
  for (auto& b : dec.biases()) b.setZero();
  dec.biases().back()[0] = out;
  return AutoEncoder(enc, dec, FeatureNormalizer::identity(1));
}

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

// Straight-line forward pass of a dense layer, written with explicit loops.
std::vector<double> dense(const Matrix& w, const Vector& b, const std::vector<double>& x,
                          bool tanh_out) {
  std::vector<double> y(static_cast<std::size_t>(w.rows()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    double s = b[i];
    for (Eigen::Index j = 0; j < w.cols(); ++j) s += w(i, j) * x[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = tanh_out ? std::tanh(s) : s;
  }
  return y;
}

double oracle_error(const AutoEncoder& ae, const Vector& raw) {
  std::vector<double> x(static_cast<std::size_t>(raw.size()));
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    x[static_cast<std::size_t>(i)] =
        (raw[i] - ae.normalizer().mean()[i]) / ae.normalizer().std()[i];
  }
  auto h = dense(ae.encoder().weights()[0], ae.encoder().biases()[0], x, true);
  h = dense(ae.decoder().weights()[0], ae.decoder().biases()[0], h, true);
  h = dense(ae.decoder().weights()[1], ae.decoder().biases()[1], h, false);
  double e = 0.0;
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    const double d = h[static_cast<std::size_t>(i)] - raw[i];
    e += d * d;
  }
  return e;
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed,
                      double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = uniform_in(rng, lo, hi);
  }
  return m;
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  RandomStream s(seed);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = s.gaussian();
  }
  return m;
}

FeatureNormalizer some_normalizer(int d) {
  Vector mean(d), std(d);
  for (int i = 0; i < d; ++i) {
    mean[i] = 0.1 * i - 0.2;
    std[i] = 0.5 + 0.25 * i;
  }
  return FeatureNormalizer(mean, std);
}

}  // namespace

// ---------------------------------------------------------------------------
// Closed-form reward transforms

TEST_CASE("reward_from_error_w: examples and range") {
  CHECK(reward_from_error_w(0.0) == 1.0);
  CHECK(reward_from_error_w(1.0) == 0.5);
  CHECK(reward_from_error_w(3.0) == 0.25);
  for (double e : {1e-9, 0.1, 10.0, 1e6}) {
    CHECK(reward_from_error_w(e) < 1.0);
    CHECK(reward_from_error_w(e) > 0.0);
  }
}

TEST_CASE("reward_from_error_js: fixed point, ln 4 and the floor") {
  CHECK(std::abs(reward_from_error_js(std::log(2.0)) - std::log(2.0)) <= 1e-9);
  CHECK(std::abs(reward_from_error_js(std::log(4.0 / 3.0)) - std::log(4.0)) <= 1e-9);
  CHECK(reward_from_error_js(0.0) == doctest::Approx(13.8155).epsilon(1e-5));
  CHECK(reward_from_error_js(0.0) == reward_from_error_js(kJsErrorFloor));
  CHECK(reward_from_error_js(0.5) > reward_from_error_js(0.6));
  CHECK(reward_from_error_w(0.5) > reward_from_error_w(0.6));
}

// ---------------------------------------------------------------------------
// Auto-encoder

TEST_CASE("reconstruction_error: exact reconstruction and zero decoder") {
  const AutoEncoder exact = constant_output_ae(0.75);
  CHECK(reconstruction_error(exact, Vector::Constant(1, 0.75)) == 0.0);
  CHECK(reward_ae_w(exact, Vector::Constant(1, 0.75)) == 1.0);

  MlpNet enc({2, 4}, 1, Activation::kTanh, Activation::kTanh);
  MlpNet dec({4, 4, 2}, 2);
  for (auto& w : dec.weights()) w.setZero();
  for (auto& b : dec.biases()) b.setZero();
  const AutoEncoder zero(enc, dec, FeatureNormalizer::identity(2));
  CHECK(reconstruction_error(zero, Vector{{3.0, 4.0}}) == 25.0);
}

TEST_CASE("reconstruction_error: 2-2-2-2 net with weights 0.1 on (1,1)") {
  MlpNet enc({2, 2}, 1, Activation::kTanh, Activation::kTanh);
  MlpNet dec({2, 2, 2}, 2);
  for (auto* n : {&enc, &dec}) {
    for (auto& w : n->weights()) w.setConstant(0.1);
    for (auto& b : n->biases()) b.setZero();
  }
  const AutoEncoder ae(enc, dec, FeatureNormalizer::identity(2));
  const double h = std::tanh(0.2);
  const double g = std::tanh(0.2 * h);
  const double y = 0.2 * g;
  const double expected = 2.0 * (y - 1.0) * (y - 1.0);
  CHECK(std::abs(reconstruction_error(ae, Vector{{1.0, 1.0}}) - expected) <= 1e-15);
}

TEST_CASE("reconstruction_error: normalized input, raw target") {
  const FeatureNormalizer n = some_normalizer(3);
  const AutoEncoder ae(3, 5, n, 17);
  const Matrix x = uniform_matrix(3, 20, 4, -2.0, 2.0);
  const Vector errs = ae.reconstruction_errors(x);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    CHECK(std::abs(errs[c] - oracle_error(ae, x.col(c))) <= 1e-12 * (1.0 + errs[c]));
  }
  CHECK_THROWS_AS(ae.reconstruction_errors(Matrix::Zero(2, 3)), ShapeError);
}

TEST_CASE("loss_ae_w: examples, symmetry and term-by-term oracle") {
  const AutoEncoder ae = constant_output_ae(0.0);
  CHECK(loss_ae_w(ae, row({0.0, 0.0}), row({1.0, std::sqrt(3.0)})) ==
        doctest::Approx(-0.625).epsilon(1e-14));
  const Matrix b = row({0.3, -1.2, 2.0});
  CHECK(loss_ae_w(ae, b, b) == 0.0);

  const AutoEncoder big(3, 6, some_normalizer(3), 5);
  const Matrix e = uniform_matrix(3, 16, 8), g = uniform_matrix(3, 16, 9, -3.0, 3.0);
  double oracle = 0.0;
  for (Eigen::Index c = 0; c < 16; ++c) {
    oracle += 1.0 / (1.0 + oracle_error(big, g.col(c))) / 16.0;
    oracle -= 1.0 / (1.0 + oracle_error(big, e.col(c))) / 16.0;
  }
  CHECK(std::abs(loss_ae_w(big, e, g) - oracle) <= 1e-12);
}

TEST_CASE("loss_ae_js: examples and term-by-term oracle") {
  const AutoEncoder ae = constant_output_ae(0.0);
  const double root = std::sqrt(std::log(2.0));
  CHECK(loss_ae_js(ae, row({root}), row({root})) ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
  // Expert reconstructed perfectly (floored), generated far away.
  CHECK(std::abs(loss_ae_js(ae, row({0.0}), row({10.0})) - kJsErrorFloor) <= 1e-12);

  const AutoEncoder big(3, 6, some_normalizer(3), 6);
  const Matrix e = uniform_matrix(3, 12, 10), g = uniform_matrix(3, 12, 11);
  double oracle = 0.0;
  for (Eigen::Index c = 0; c < 12; ++c) {
    oracle += std::max(oracle_error(big, e.col(c)), 1e-6) / 12.0;
    oracle -= std::log(1.0 - std::exp(-std::max(oracle_error(big, g.col(c)), 1e-6))) / 12.0;
  }
  CHECK(loss_ae_js(big, e, g) == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("AE losses: batch errors") {
  const AutoEncoder ae(2, 3, FeatureNormalizer::identity(2), 1);
  CHECK_THROWS_AS(loss_ae_w(ae, Matrix(2, 0), Matrix(2, 0)), DataError);
  CHECK_THROWS_AS(loss_ae_w(ae, Matrix::Zero(2, 2), Matrix::Zero(2, 3)), ShapeError);
  CHECK_THROWS_AS(loss_ae_js(ae, Matrix(2, 0), Matrix(2, 0)), DataError);
}

TEST_CASE("AE-W gradient: one step moves rewards in the adversarial direction") {
  const AutoEncoder start(2, 8, FeatureNormalizer::identity(2), 3);
  const Matrix e = uniform_matrix(2, 32, 1, -1.0, 0.0);
  const Matrix g = uniform_matrix(2, 32, 2, 0.5, 1.5);
  AutoEncoder ae = start;
  AeGradients grads{GradientSet(ae.encoder()), GradientSet(ae.decoder())};
  loss_ae_w(ae, e, g, &grads);
  OptimizerState oe = OptimizerState::sgd(1e-3), od = OptimizerState::sgd(1e-3);
  optimizer_step(ae.encoder(), oe, grads.encoder);
  optimizer_step(ae.decoder(), od, grads.decoder);
  const auto mean_r = [](const AutoEncoder& a, const Matrix& m) {
    return (1.0 / (1.0 + a.reconstruction_errors(m).array())).mean();
  };
  CHECK(mean_r(ae, e) > mean_r(start, e));
  CHECK(mean_r(ae, g) < mean_r(start, g));
}

// ---------------------------------------------------------------------------
// VAE

TEST_CASE("kl_diag_gaussian_to_prior: examples") {
  CHECK(kl_diag_gaussian_to_prior(Vector::Zero(3), Vector::Zero(3)) == 0.0);
  CHECK(std::abs(kl_diag_gaussian_to_prior(Vector::Ones(1), Vector::Zero(1)) - 0.5) <= 1e-12);
  CHECK(kl_diag_gaussian_to_prior(Vector::Zero(1), Vector::Ones(1)) ==
        doctest::Approx(0.5 * (std::exp(1.0) - 2.0)).epsilon(1e-14));
  CHECK(kl_diag_gaussian_to_prior(Vector::Zero(1), Vector::Ones(1)) ==
        doctest::Approx(0.359141).epsilon(1e-6));
}

TEST_CASE("VAE: Monte-Carlo KL agrees with the closed form") {
  const VariationalAutoEncoder vae(3, 8, 2, FeatureNormalizer::identity(3), 21);
  const Vector x{{0.4, -0.3, 0.9}};
  const auto enc = vae.encode(x);
  const Vector mu = enc.mean.col(0), lv = enc.logvar.col(0);
  const Matrix eps = gaussian_matrix(2, 10000, 5);
  std::vector<double> samples;
  for (Eigen::Index c = 0; c < eps.cols(); ++c) {
    double log_ratio = 0.0;
    for (int j = 0; j < 2; ++j) {
      const double z = mu[j] + std::exp(0.5 * lv[j]) * eps(j, c);
      const double log_q = -0.5 * eps(j, c) * eps(j, c) - 0.5 * lv[j];
      const double log_p = -0.5 * z * z;
      log_ratio += log_q - log_p;
    }
    samples.push_back(log_ratio);
  }
  const double n = static_cast<double>(samples.size());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double var = 0.0;
  for (double s : samples) var += (s - mean) * (s - mean);
  const double se = std::sqrt(var / (n - 1.0) / n);
  CHECK(std::abs(mean - kl_to_prior(vae, x)) <= 3.0 * se);
}

TEST_CASE("loss_vae: symmetry, KL-free limit and term-by-term oracle") {
  const VariationalAutoEncoder vae(2, 6, 3, some_normalizer(2), 8);
  const Matrix e = uniform_matrix(2, 10, 1), g = uniform_matrix(2, 10, 2);
  const Matrix ne = gaussian_matrix(3, 10, 3), ng = gaussian_matrix(3, 10, 4);
  CHECK(loss_vae(vae, e, e, ne, ne) == 0.0);

  // Posterior mean decoded and no KL term: the AE-W loss on VAE errors.
  const Vector re = vae.reconstruction_errors(e), rg = vae.reconstruction_errors(g);
  const double w_form =
      (1.0 / (1.0 + rg.array())).mean() - (1.0 / (1.0 + re.array())).mean();
  CHECK(std::abs(loss_vae(vae, e, g, Matrix(), Matrix(), nullptr, 0.0) - w_form) <= 1e-14);

  const auto oracle_terms = [&](const Matrix& x, const Matrix& noise, double& r,
                                double& kl) {
    r = 0.0;
    kl = 0.0;
    const auto enc = vae.encode(x);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      Vector z(3);
      for (int j = 0; j < 3; ++j) {
        const double lv = enc.logvar(j, c);
        z[j] = enc.mean(j, c) + std::exp(0.5 * lv) * noise(j, c);
        kl += 0.5 * (enc.mean(j, c) * enc.mean(j, c) + std::exp(lv) - 1.0 - lv);
      }
      const double err = (vae.decoder().forward(z) - x.col(c)).squaredNorm();
      r += 1.0 / (1.0 + err);
    }
    r /= static_cast<double>(x.cols());
    kl /= static_cast<double>(x.cols());
  };
  double r_e, kl_e, r_g, kl_g;
  oracle_terms(e, ne, r_e, kl_e);
  oracle_terms(g, ng, r_g, kl_g);
  const double w = 0.7;
  CHECK(loss_vae(vae, e, g, ne, ng, nullptr, w) ==
        doctest::Approx((r_g - r_e) + w * (kl_e - kl_g)).epsilon(1e-12));
}

TEST_CASE("VAE: log-variances are clamped") {
  MlpNet trunk({1, 2}, 1, Activation::kTanh, Activation::kTanh);
  MlpNet mean_head({2, 1}, 2), logvar_head({2, 1}, 3), dec({1, 2, 1}, 4);
  logvar_head.weights()[0].setZero();
  logvar_head.biases()[0].setConstant(50.0);
  const VariationalAutoEncoder vae(trunk, mean_head, logvar_head, dec,
                                   FeatureNormalizer::identity(1));
  CHECK(vae.encode(row({0.2})).logvar(0, 0) == kVaeLogVarLimit);
}

// ---------------------------------------------------------------------------
// Discriminator

TEST_CASE("discriminator: logit-zero rewards and loss") {
  CHECK(std::abs(disc_reward_from_logit(DiscObjective::kJsd, 0.0) - std::log(2.0)) <= 1e-15);
  CHECK(disc_reward_from_logit(DiscObjective::kFkld, 0.0) == 0.0);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(disc_reward_from_logit(DiscObjective::kJsd, 2.0) ==
        doctest::Approx(-std::log(1.0 - sigmoid(2.0))).epsilon(1e-14));
  CHECK(disc_reward_from_logit(DiscObjective::kFkld, 1.5) ==
        doctest::Approx(std::exp(1.5) * -1.5).epsilon(1e-14));
  // Extreme logits stay finite.
  CHECK(std::isfinite(disc_reward_from_logit(DiscObjective::kJsd, 800.0)));
  CHECK(std::isfinite(disc_reward_from_logit(DiscObjective::kJsd, -800.0)));

  MlpNet net({2, 4, 4, 1}, 3);
  net.weights().back().setZero();
  net.biases().back().setZero();
  const Discriminator d(net, DiscObjective::kJsd, FeatureNormalizer::identity(2));
  const auto lr = disc_loss_and_reward(d, uniform_matrix(2, 6, 1), uniform_matrix(2, 6, 2));
  CHECK(std::abs(lr.loss - std::log(2.0)) <= 1e-15);
  CHECK(std::abs(lr.reward(Vector{{0.1, 0.2}}) - std::log(2.0)) <= 1e-15);
}

TEST_CASE("discriminator: BCE oracle and frozen reward function") {
  Discriminator d(2, 5, DiscObjective::kJsd, some_normalizer(2), 4);
  const Matrix e = uniform_matrix(2, 7, 3), g = uniform_matrix(2, 7, 4);
  const Vector le = d.logits(e), lg = d.logits(g);
  double oracle = 0.0;
  for (int i = 0; i < 7; ++i) {
    oracle -= std::log(1.0 / (1.0 + std::exp(-le[i]))) / 7.0;
    oracle -= std::log(1.0 - 1.0 / (1.0 + std::exp(-lg[i]))) / 7.0;
  }
  const auto lr = disc_loss_and_reward(d, e, g);
  CHECK(lr.loss == doctest::Approx(oracle / 2.0).epsilon(1e-12));  // pooled mean over 14

  const double before = lr.reward(e.col(0));
  d.net().biases().back()[0] += 1.0;
  CHECK(lr.reward(e.col(0)) == before);
  CHECK(d.rewards(e)[0] != before);
}

// ---------------------------------------------------------------------------
// Greedy optimal transport

TEST_CASE("GOT: hand-traced examples") {
  const Matrix atoms = row({0.0, 1.0});
  GotReward g(atoms, FeatureNormalizer::identity(1), 2, 1.0, 1.0);
  CHECK(g.step(Vector::Constant(1, 0.0)) == 1.0);
  CHECK(g.step(Vector::Constant(1, 1.0)) == 1.0);
  CHECK(g.remaining_total() == 0.0);
  CHECK(g.step(Vector::Constant(1, 0.5)) == 0.0);

  got_reset(g);
  const double r = got_reward_step(g, Vector::Constant(1, 0.4));
  CHECK(std::abs(g.last_cost() - 0.4) <= 1e-12);
  CHECK(std::abs(r - std::exp(-0.4)) <= 1e-12);
  CHECK(r == doctest::Approx(0.670320).epsilon(1e-6));
  CHECK(g.remaining()[0] == 0.0);
  CHECK(g.remaining()[1] == 0.5);
}

TEST_CASE("GOT: default scale and ledger conservation") {
  const Matrix atoms = uniform_matrix(3, 7, 12);
  GotReward g(atoms, some_normalizer(3), 5);
  CHECK(g.alpha() == 5.0);
  CHECK(g.beta() == 5.0);
  for (int t = 0; t < 5; ++t) {
    const double before = g.remaining_total();
    const double r = g.step(uniform_matrix(3, 1, 100 + static_cast<std::uint64_t>(t)).col(0));
    CHECK(r > 0.0);
    CHECK(r <= 5.0);
    CHECK(std::abs(g.last_consumed() - 0.2) <= 1e-12);
    CHECK(std::abs(before - g.remaining_total() - 0.2) <= 1e-12);
  }
}

namespace {

// Brute-force greedy coupling on an integer ledger: atom weight 1/N is T
// units and step weight 1/T is N units of 1/(N T).
struct BruteGot {
  std::vector<std::vector<double>> atoms;
  std::vector<long> units;
  long step_units;
  long n_atoms;

  BruteGot(const Matrix& a, int horizon)
      : units(static_cast<std::size_t>(a.cols()), horizon),
        step_units(a.cols()), n_atoms(a.cols()) {
    for (Eigen::Index c = 0; c < a.cols(); ++c) {
      atoms.emplace_back(a.col(c).data(), a.col(c).data() + a.rows());
    }
  }

  // Returns the transport cost normalized by the step weight, or -1 when
  // nothing could be consumed.
  double step(const Vector& x) {
    std::vector<std::pair<double, std::size_t>> order;
    for (std::size_t k = 0; k < atoms.size(); ++k) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < atoms[k].size(); ++i) {
        const double d = atoms[k][i] - x[static_cast<Eigen::Index>(i)];
        d2 += d * d;
      }
      order.emplace_back(std::sqrt(d2), k);
    }
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    long need = step_units;
    double cost = 0.0;
    long taken = 0;
    for (const auto& [d, k] : order) {
      if (need == 0) break;
      const long take = std::min(need, units[k]);
      units[k] -= take;
      need -= take;
      taken += take;
      cost += static_cast<double>(take) * d;
    }
    if (taken == 0) return -1.0;
    return cost / static_cast<double>(n_atoms);
  }
};

}  // namespace

TEST_CASE("GOT: matches a brute-force greedy oracle on small instances") {
  Rng rng(2024);
  int instances = 0;
  for (int n = 1; n <= 4; ++n) {
    for (int horizon = 1; horizon <= 4; ++horizon) {
      for (int rep = 0; rep < 40; ++rep) {
        const int dim = 1 + rep % 2;
        // Half the instances sit on an integer grid so distance ties occur.
        const bool grid = rep % 4 < 2;
        Matrix atoms(dim, n);
        for (Eigen::Index c = 0; c < n; ++c) {
          for (int i = 0; i < dim; ++i) {
            atoms(i, c) = grid ? std::floor(uniform_in(rng, -2.0, 3.0)) : uniform_in(rng, -2.0, 2.0);
          }
        }
        GotReward got(atoms, FeatureNormalizer::identity(dim), horizon, 2.0, 1.5);
        BruteGot brute(atoms, horizon);
        for (int t = 0; t < horizon + 1; ++t) {
          Vector x(dim);
          for (int i = 0; i < dim; ++i) {
            x[i] = grid ? std::floor(uniform_in(rng, -2.0, 3.0)) : uniform_in(rng, -2.0, 2.0);
          }
          const double r = got.step(x);
          const double c = brute.step(x);
          const double expected = c < 0.0 ? 0.0 : 2.0 * std::exp(-1.5 * c);
          CHECK(std::abs(r - expected) <= 1e-12);
          for (Eigen::Index k = 0; k < n; ++k) {
            const double w = static_cast<double>(brute.units[static_cast<std::size_t>(k)]) /
                             static_cast<double>(n * horizon);
            CHECK(std::abs(got.remaining()[k] - w) <= 1e-12);
          }
        }
        ++instances;
      }
    }
  }
  CHECK(instances == 640);
}

TEST_CASE("GOT: constructor errors") {
  CHECK_THROWS_AS(GotReward(Matrix(2, 0), FeatureNormalizer::identity(2), 4), DataError);
  CHECK_THROWS_AS(GotReward(Matrix::Zero(2, 3), FeatureNormalizer::identity(2), 0), ConfigError);
}

// ---------------------------------------------------------------------------
// Absorbing states

namespace {

Trajectory small_trajectory(int length, bool terminated) {
  Trajectory t;
  t.states = uniform_matrix(2, length, 7);
  t.actions = uniform_matrix(1, length, 8);
  t.dones.assign(static_cast<std::size_t>(length), false);
  if (terminated) t.dones.back() = true;
  t.final_state = Vector{{0.5, -0.5}};
  return t;
}

}  // namespace

TEST_CASE("asw_augment: time-limit trajectory only gains zero flags") {
  const Trajectory t = small_trajectory(5, false);
  const Trajectory a = asw_augment(t, 5);
  CHECK(a.length() == 5);
  CHECK(a.states.topRows(2) == t.states);
  CHECK(a.states.row(2).isZero());
  CHECK(a.actions == t.actions);
  CHECK(a.dones == t.dones);
}

TEST_CASE("asw_augment: termination at step 3 of horizon 5 adds two absorbing steps") {
  const Trajectory t = small_trajectory(3, true);
  const Trajectory a = asw_augment(t, 5);
  REQUIRE(a.length() == 5);
  for (int c = 3; c < 5; ++c) {
    CHECK(a.states.col(c) == Vector{{0.0, 0.0, 1.0}});
    CHECK(a.actions.col(c).isZero());
  }
  CHECK(a.states.row(2).head(3).isZero());
  CHECK(asw_strip(a).states == t.states);
}

TEST_CASE("asw: augment then strip round-trips a demo set") {
  for (int len : {1, 3, 5}) {
    for (bool term : {false, true}) {
      const Trajectory t = small_trajectory(len, term);
      const Trajectory back = asw_strip(asw_augment(t, 5));
      CHECK(back.states == t.states);
      CHECK(back.actions == t.actions);
      CHECK(back.dones == t.dones);
    }
  }
}

TEST_CASE("asw_augment_normalizer: flag feature passes through unscaled") {
  const FeatureNormalizer n(Vector{{1.0, 2.0, 3.0}}, Vector{{4.0, 5.0, 6.0}});
  const FeatureNormalizer a = asw_augment_normalizer(n, 2);
  CHECK(a.mean() == Vector{{1.0, 2.0, 0.0, 3.0}});
  CHECK(a.std() == Vector{{4.0, 5.0, 1.0, 6.0}});
}

// ---------------------------------------------------------------------------
// Latents

TEST_CASE("latent activations: shape, default width and forward oracle") {
  const AutoEncoder ae(6, 100, FeatureNormalizer::identity(6), 1);
  const Matrix x = uniform_matrix(6, 9, 2);
  const Matrix l = ae.latent(x);
  CHECK(l.rows() == 100);
  CHECK(l.cols() == 9);

  MlpNet enc({2, 2}, 1, Activation::kTanh, Activation::kTanh);
  enc.weights()[0] = Matrix{{0.5, -0.25}, {0.125, 1.0}};
  enc.biases()[0] = Vector{{0.1, -0.2}};
  MlpNet dec({2, 2, 2}, 2);
  const AutoEncoder tiny(enc, dec, FeatureNormalizer(Vector{{1.0, 0.0}}, Vector{{2.0, 1.0}}));
  const Matrix lt = tiny.latent(Matrix{{3.0}, {0.5}});
  CHECK(std::abs(lt(0, 0) - std::tanh(0.5 * 1.0 - 0.25 * 0.5 + 0.1)) <= 1e-15);
  CHECK(std::abs(lt(1, 0) - std::tanh(0.125 * 1.0 + 1.0 * 0.5 - 0.2)) <= 1e-15);

  const Discriminator d(3, 7, DiscObjective::kFkld, FeatureNormalizer::identity(3), 1);
  CHECK(d.latent(uniform_matrix(3, 4, 1)).rows() == 7);
  const VariationalAutoEncoder vae(3, 11, 4, FeatureNormalizer::identity(3), 1);
  CHECK(vae.latent(uniform_matrix(3, 4, 1)).rows() == 11);
  CHECK_THROWS_AS(ae.latent(Matrix::Zero(5, 2)), ShapeError);
}

// ---------------------------------------------------------------------------
// RewardModel interface

TEST_CASE("reward models: every variant updates, clips and round-trips") {
  const Matrix expert = uniform_matrix(3, 64, 1, -1.0, 1.0);
  const Matrix generated = uniform_matrix(3, 64, 2, -0.5, 2.0);
  const FeatureNormalizer norm = FeatureNormalizer::fit(expert);
  for (RewardVariant v : {RewardVariant::kAeW, RewardVariant::kAeJs, RewardVariant::kVae,
                          RewardVariant::kDiscJsd, RewardVariant::kDiscFkld,
                          RewardVariant::kGot}) {
    CAPTURE(to_string(v));
    RewardModelConfig cfg;
    cfg.variant = v;
    cfg.hidden = 16;
    cfg.vae_latent = 4;
    cfg.horizon = 8;
    cfg.seed = 3;
    cfg.learning_rate = 0.05;  // large enough to push weights into the clip box
    auto model = make_reward_model(cfg, expert, norm);
    CHECK(model->variant() == v);
    CHECK(model->input_dim() == 3);
    for (int i = 0; i < 20; ++i) CHECK(std::isfinite(model->update(expert, generated)));
    if (is_autoencoder_variant(v)) CHECK(model->max_abs_parameter() <= 0.99);
    const Vector r = model->episode_rewards(generated.leftCols(8));
    CHECK(r.size() == 8);
    CHECK(r.allFinite());

    std::stringstream ss;
    write_reward_model(ss, *model);
    auto back = read_reward_model(ss, cfg, expert, norm);
    CHECK(back->variant() == v);
    CHECK(back->episode_rewards(generated.leftCols(8)) == r);
    if (v == RewardVariant::kGot) {
      CHECK_THROWS_AS(model->latent_activations(expert), std::logic_error);
      CHECK(model->update(expert, generated) == 0.0);
    } else {
      CHECK(model->latent_activations(expert).cols() == 64);
    }
    CHECK_THROWS_AS(model->update(Matrix(3, 0), Matrix(3, 0)), DataError);
  }
}

TEST_CASE("reward models: variant names and clipping set") {
  CHECK(reward_variant_from_string("ae_w") == RewardVariant::kAeW);
  CHECK(reward_variant_from_string("disc_fkld") == RewardVariant::kDiscFkld);
  CHECK(to_string(RewardVariant::kGot) == "got");
  CHECK_THROWS_AS(reward_variant_from_string("gail"), ConfigError);
  CHECK(is_autoencoder_variant(RewardVariant::kAeW));
  CHECK(is_autoencoder_variant(RewardVariant::kAeJs));
  CHECK(is_autoencoder_variant(RewardVariant::kVae));
  CHECK_FALSE(is_autoencoder_variant(RewardVariant::kDiscJsd));
}

TEST_CASE("reward checkpoints: corrupted tag is rejected") {
  const Matrix expert = uniform_matrix(2, 8, 1);
  RewardModelConfig cfg;
  cfg.hidden = 4;
  std::stringstream ss;
  write_reward_model(ss, *make_reward_model(cfg, expert, FeatureNormalizer::fit(expert)));
  std::string bytes = ss.str();
  bytes[0] = 0x33;
  std::stringstream bad(bytes);
  CHECK_THROWS_AS(read_reward_model(bad, cfg, expert, FeatureNormalizer::fit(expert)),
                  DataError);
}
