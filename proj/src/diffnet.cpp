#include "aeail/diffnet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>

#include "aeail/errors.hpp"
#include "aeail/rng.hpp"

namespace aeail {

namespace {

template <typename Derived>
void apply_activation(Activation act, Eigen::MatrixBase<Derived>& z) {
  if (act == Activation::kTanh) z = z.array().tanh().matrix();
}

// d(act)/dz expressed through the post-activation value.
Matrix activation_derivative(Activation act, const Matrix& post) {
  if (act == Activation::kTanh) {
    return (1.0 - post.array().square()).matrix();
  }
  return Matrix::Ones(post.rows(), post.cols());
}

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  std::ostringstream os;
  os << r << "x" << c;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// GradientSet

GradientSet::GradientSet(const MlpNet& net) {
  weights.reserve(net.num_layers());
  biases.reserve(net.num_layers());
  for (int l = 0; l < net.num_layers(); ++l) {
    weights.emplace_back(Matrix::Zero(net.weights()[l].rows(),
                                      net.weights()[l].cols()));
    biases.emplace_back(Vector::Zero(net.biases()[l].size()));
  }
}

void GradientSet::check_congruent(const MlpNet& net) const {
  if (static_cast<int>(weights.size()) != net.num_layers() ||
      biases.size() != weights.size()) {
    throw ShapeError("gradient set has " + std::to_string(weights.size()) +
                     " layers, network has " +
                     std::to_string(net.num_layers()));
  }
  for (int l = 0; l < net.num_layers(); ++l) {
    const Matrix& w = net.weights()[l];
    if (weights[l].rows() != w.rows() || weights[l].cols() != w.cols() ||
        biases[l].size() != net.biases()[l].size()) {
      throw ShapeError("gradient layer " + std::to_string(l) + " is " +
                       shape_str(weights[l].rows(), weights[l].cols()) +
                       ", network layer is " + shape_str(w.rows(), w.cols()));
    }
  }
}

void GradientSet::check_congruent(const GradientSet& other) const {
  if (weights.size() != other.weights.size() ||
      biases.size() != other.biases.size()) {
    throw ShapeError("gradient sets differ in layer count");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (weights[l].rows() != other.weights[l].rows() ||
        weights[l].cols() != other.weights[l].cols() ||
        biases[l].size() != other.biases[l].size()) {
      throw ShapeError("gradient sets differ at layer " + std::to_string(l));
    }
  }
}

void GradientSet::accumulate(const GradientSet& other, double scale) {
  check_congruent(other);
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += scale * other.weights[l];
    biases[l] += scale * other.biases[l];
  }
}

void GradientSet::scale(double factor) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] *= factor;
    biases[l] *= factor;
  }
}

void GradientSet::set_zero() {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l].setZero();
    biases[l].setZero();
  }
}

bool GradientSet::all_finite() const {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].allFinite() || !biases[l].allFinite()) return false;
  }
  return true;
}

Eigen::Index GradientSet::size() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += weights[l].size() + biases[l].size();
  }
  return n;
}

Vector GradientSet::flatten() const {
  Vector flat(size());
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) {
        flat[k++] = weights[l](r, c);
      }
    }
    flat.segment(k, biases[l].size()) = biases[l];
    k += biases[l].size();
  }
  return flat;
}

void GradientSet::assign_flat(const Vector& flat) {
  if (flat.size() != size()) {
    throw ShapeError("flat vector of length " + std::to_string(flat.size()) +
                     " does not match " + std::to_string(size()) +
                     " parameters");
  }
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r) {
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) {
        weights[l](r, c) = flat[k++];
      }
    }
    biases[l] = flat.segment(k, biases[l].size());
    k += biases[l].size();
  }
}

// ---------------------------------------------------------------------------
// MlpNet

MlpNet::MlpNet(std::vector<int> layer_sizes, std::uint64_t seed,
               Activation hidden, Activation output)
    : layer_sizes_(std::move(layer_sizes)), hidden_(hidden), output_(output) {
  if (layer_sizes_.size() < 2) {
    throw ShapeError("a network needs at least an input and an output layer");
  }
  for (int n : layer_sizes_) {
    if (n <= 0) throw ShapeError("layer sizes must be positive");
  }
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
    const int fan_in = layer_sizes_[l];
    const int fan_out = layer_sizes_[l + 1];
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    // Row-major fill so the draw order matches the flat/checkpoint layout.
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) w(r, c) = uniform_in(rng, -limit, limit);
    }
    weights_.push_back(std::move(w));
    biases_.emplace_back(Vector::Zero(fan_out));
  }
}

Eigen::Index MlpNet::parameter_count() const {
  Eigen::Index n = 0;
  for (int l = 0; l < num_layers(); ++l) {
    n += weights_[l].size() + biases_[l].size();
  }
  return n;
}

void MlpNet::check_input(Eigen::Index rows) const {
  if (layer_sizes_.empty()) throw ShapeError("network is empty");
  if (rows != input_dim()) {
    throw ShapeError("input has dimension " + std::to_string(rows) +
                     ", network expects " + std::to_string(input_dim()));
  }
}

Vector MlpNet::forward(const Vector& x) const {
  check_input(x.size());
  Vector a = x;
  for (int l = 0; l < num_layers(); ++l) {
    Vector z = weights_[l] * a + biases_[l];
    apply_activation(activation_of(l), z);
    a = std::move(z);
  }
  return a;
}

Matrix MlpNet::forward_batch(const Matrix& inputs, ForwardTape* tape) const {
  check_input(inputs.rows());
  if (tape != nullptr) {
    tape->activations.clear();
    tape->activations.reserve(num_layers() + 1);
    tape->activations.push_back(inputs);
  }
  Matrix a = inputs;
  for (int l = 0; l < num_layers(); ++l) {
    Matrix z = weights_[l] * a;
    z.colwise() += biases_[l];
    apply_activation(activation_of(l), z);
    a = std::move(z);
    if (tape != nullptr) tape->activations.push_back(a);
  }
  return a;
}

Matrix MlpNet::backward_batch(const ForwardTape& tape, const Matrix& upstream,
                              GradientSet& grads) const {
  grads.check_congruent(*this);
  if (static_cast<int>(tape.activations.size()) != num_layers() + 1) {
    throw ShapeError("forward tape does not belong to this network");
  }
  const Matrix& out = tape.activations.back();
  if (upstream.rows() != out.rows() || upstream.cols() != out.cols()) {
    throw ShapeError("upstream gradient is " +
                     shape_str(upstream.rows(), upstream.cols()) +
                     ", output is " + shape_str(out.rows(), out.cols()));
  }
  Matrix delta = upstream;
  for (int l = num_layers() - 1; l >= 0; --l) {
    delta.array() *=
        activation_derivative(activation_of(l), tape.activations[l + 1])
            .array();
    const Matrix& input = tape.activations[l];
    grads.weights[l].noalias() += delta * input.transpose();
    grads.biases[l] += delta.rowwise().sum();
    delta = weights_[l].transpose() * delta;
  }
  return delta;
}

Matrix MlpNet::jvp_batch(const ForwardTape& tape,
                         const GradientSet& tangent) const {
  tangent.check_congruent(*this);
  if (static_cast<int>(tape.activations.size()) != num_layers() + 1) {
    throw ShapeError("forward tape does not belong to this network");
  }
  const Eigen::Index n = tape.activations.front().cols();
  Matrix d_act = Matrix::Zero(input_dim(), n);
  for (int l = 0; l < num_layers(); ++l) {
    Matrix dz = weights_[l] * d_act + tangent.weights[l] * tape.activations[l];
    dz.colwise() += tangent.biases[l];
    dz.array() *=
        activation_derivative(activation_of(l), tape.activations[l + 1])
            .array();
    d_act = std::move(dz);
  }
  return d_act;
}

Matrix MlpNet::hidden_activations(const Matrix& inputs, int layer) const {
  if (layer < 0 || layer + 1 >= num_layers()) {
    throw ShapeError("network has no hidden layer " + std::to_string(layer));
  }
  check_input(inputs.rows());
  Matrix a = inputs;
  for (int l = 0; l <= layer; ++l) {
    Matrix z = weights_[l] * a;
    z.colwise() += biases_[l];
    apply_activation(activation_of(l), z);
    a = std::move(z);
  }
  return a;
}

Vector MlpNet::flat_parameters() const {
  GradientSet view;
  view.weights = weights_;
  view.biases = biases_;
  return view.flatten();
}

void MlpNet::set_flat_parameters(const Vector& flat) {
  GradientSet view(*this);
  view.assign_flat(flat);
  weights_ = std::move(view.weights);
  biases_ = std::move(view.biases);
}

bool MlpNet::operator==(const MlpNet& other) const {
  if (layer_sizes_ != other.layer_sizes_ || hidden_ != other.hidden_ ||
      output_ != other.output_) {
    return false;
  }
  for (int l = 0; l < num_layers(); ++l) {
    if (weights_[l] != other.weights_[l] || biases_[l] != other.biases_[l]) {
      return false;
    }
  }
  return true;
}

BackwardResult backward(const MlpNet& net, const Vector& x,
                        const Vector& upstream) {
  if (upstream.size() != net.output_dim()) {
    throw ShapeError("upstream has length " + std::to_string(upstream.size()) +
                     ", network output is " + std::to_string(net.output_dim()));
  }
  ForwardTape tape;
  net.forward_batch(x, &tape);
  BackwardResult result{GradientSet(net), Vector()};
  Matrix dx = net.backward_batch(tape, upstream, result.grads);
  result.input_grad = dx.col(0);
  return result;
}

// ---------------------------------------------------------------------------
// Optimizers

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState s;
  s.method = OptimizerMethod::kSgd;
  s.learning_rate = lr;
  return s;
}

OptimizerState OptimizerState::adam(double lr, double beta1, double beta2,
                                    double epsilon) {
  OptimizerState s;
  s.method = OptimizerMethod::kAdam;
  s.learning_rate = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.epsilon = epsilon;
  return s;
}

void optimizer_step(MlpNet& net, OptimizerState& state,
                    const GradientSet& grads) {
  grads.check_congruent(net);
  if (!grads.all_finite()) {
    throw NumericFault("non-finite gradient entry at optimizer step " +
                       std::to_string(state.step_count + 1));
  }
  auto& w = net.weights();
  auto& b = net.biases();
  if (state.method == OptimizerMethod::kSgd) {
    for (int l = 0; l < net.num_layers(); ++l) {
      w[l] -= state.learning_rate * grads.weights[l];
      b[l] -= state.learning_rate * grads.biases[l];
    }
    ++state.step_count;
    return;
  }

  if (state.first_moment.weights.empty()) {
    state.first_moment = GradientSet(net);
    state.second_moment = GradientSet(net);
  }
  state.first_moment.check_congruent(net);
  state.second_moment.check_congruent(net);

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = state.beta1 * m + (1.0 - state.beta1) * g;
    v = state.beta2 * v + (1.0 - state.beta2) * g.cwiseProduct(g);
    param.array() -= state.learning_rate * (m.array() / c1) /
                     ((v.array() / c2).sqrt() + state.epsilon);
  };
  for (int l = 0; l < net.num_layers(); ++l) {
    update(w[l], state.first_moment.weights[l], state.second_moment.weights[l],
           grads.weights[l]);
    update(b[l], state.first_moment.biases[l], state.second_moment.biases[l],
           grads.biases[l]);
  }
}

void clip_params(MlpNet& net, double lo, double hi) {
  for (int l = 0; l < net.num_layers(); ++l) {
    net.weights()[l] = net.weights()[l].cwiseMax(lo).cwiseMin(hi);
    net.biases()[l] = net.biases()[l].cwiseMax(lo).cwiseMin(hi);
  }
}

double max_abs_parameter(const MlpNet& net) {
  double m = 0.0;
  for (int l = 0; l < net.num_layers(); ++l) {
    m = std::max(m, net.weights()[l].cwiseAbs().maxCoeff());
    m = std::max(m, net.biases()[l].cwiseAbs().maxCoeff());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Gradient checking

Vector numeric_gradient(const std::function<double(const Vector&)>& f,
                        const Vector& at, double eps) {
  Vector g(at.size());
  Vector probe = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    probe[i] = at[i] + eps;
    const double up = f(probe);
    probe[i] = at[i] - eps;
    const double down = f(probe);
    probe[i] = at[i];
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

double max_relative_error(const Vector& analytic, const Vector& numeric) {
  if (analytic.size() != numeric.size()) {
    throw ShapeError("gradient vectors differ in length");
  }
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double scale = std::max(0.5 * (std::abs(a) + std::abs(n)), 1e-5);
    worst = std::max(worst, std::abs(a - n) / scale);
  }
  return worst;
}

double grad_check(const MlpNet& net, const Vector& x, double eps,
                  const GradientSet& analytic) {
  analytic.check_congruent(net);
  MlpNet probe = net;
  auto loss = [&](const Vector& params) {
    probe.set_flat_parameters(params);
    return probe.forward(x).sum();
  };
  const Vector numeric = numeric_gradient(loss, net.flat_parameters(), eps);
  return max_relative_error(analytic.flatten(), numeric);
}

double grad_check(const MlpNet& net, const Vector& x, double eps) {
  const Vector upstream = Vector::Ones(net.output_dim());
  return grad_check(net, x, eps, backward(net, x, upstream).grads);
}

}  // namespace aeail
