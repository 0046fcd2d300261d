#pragma once

// Small feed-forward network core. Batches are column-major: a matrix of
// shape (features x samples), one sample per column.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

namespace aeail {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class Activation : std::uint8_t { kIdentity = 0, kTanh = 1 };

class MlpNet;

// Per-parameter arrays congruent with an MlpNet.
class GradientSet {
 public:
  GradientSet() = default;
  // Zero-filled, shaped like `net`.
  explicit GradientSet(const MlpNet& net);

  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  // Throws ShapeError if the layer shapes differ from `net`.
  void check_congruent(const MlpNet& net) const;
  void check_congruent(const GradientSet& other) const;

  // this += scale * other
  void accumulate(const GradientSet& other, double scale = 1.0);
  void scale(double factor);
  void set_zero();
  bool all_finite() const;
  Eigen::Index size() const;

  // Layer order, each layer's weights row-major then its bias.
  Vector flatten() const;
  void assign_flat(const Vector& flat);
};

// Activations recorded by a batched forward pass, consumed by backward and
// jvp. activations[0] is the input; activations[l + 1] is the post-activation
// output of layer l.
struct ForwardTape {
  std::vector<Matrix> activations;
};

class MlpNet {
 public:
  MlpNet() = default;
  // Glorot-uniform weights, zero biases.
  MlpNet(std::vector<int> layer_sizes, std::uint64_t seed,
         Activation hidden = Activation::kTanh,
         Activation output = Activation::kIdentity);

  const std::vector<int>& layer_sizes() const { return layer_sizes_; }
  int input_dim() const { return layer_sizes_.front(); }
  int output_dim() const { return layer_sizes_.back(); }
  int num_layers() const { return static_cast<int>(weights_.size()); }
  Eigen::Index parameter_count() const;
  Activation hidden_activation() const { return hidden_; }
  Activation output_activation() const { return output_; }
  Activation activation_of(int layer) const {
    return layer + 1 == num_layers() ? output_ : hidden_;
  }

  std::vector<Matrix>& weights() { return weights_; }
  const std::vector<Matrix>& weights() const { return weights_; }
  std::vector<Vector>& biases() { return biases_; }
  const std::vector<Vector>& biases() const { return biases_; }

  Vector forward(const Vector& x) const;
  Matrix forward_batch(const Matrix& inputs, ForwardTape* tape = nullptr) const;

  // Accumulates parameter gradients into `grads` and returns the gradient
  // with respect to the batch input. `upstream` is dL/d(output).
  Matrix backward_batch(const ForwardTape& tape, const Matrix& upstream,
                        GradientSet& grads) const;

  // Directional derivative of the outputs along a parameter tangent.
  Matrix jvp_batch(const ForwardTape& tape, const GradientSet& tangent) const;

  // Post-activation values of hidden layer `layer` (0 = first hidden).
  Matrix hidden_activations(const Matrix& inputs, int layer = 0) const;

  Vector flat_parameters() const;
  void set_flat_parameters(const Vector& flat);

  bool operator==(const MlpNet& other) const;

 private:
  void check_input(Eigen::Index rows) const;

  std::vector<int> layer_sizes_;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
  Activation hidden_ = Activation::kTanh;
  Activation output_ = Activation::kIdentity;
};

struct BackwardResult {
  GradientSet grads;
  Vector input_grad;
};

BackwardResult backward(const MlpNet& net, const Vector& x,
                        const Vector& upstream);

enum class OptimizerMethod : std::uint8_t { kSgd, kAdam };

struct OptimizerState {
  OptimizerMethod method = OptimizerMethod::kAdam;
  std::int64_t step_count = 0;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  GradientSet first_moment;
  GradientSet second_moment;

  static OptimizerState sgd(double lr);
  static OptimizerState adam(double lr, double beta1 = 0.9,
                             double beta2 = 0.999, double epsilon = 1e-8);
};

// Throws NumericFault on any non-finite gradient entry; the net is left
// untouched in that case.
void optimizer_step(MlpNet& net, OptimizerState& state,
                    const GradientSet& grads);

void clip_params(MlpNet& net, double lo, double hi);
double max_abs_parameter(const MlpNet& net);

// Central differences of a scalar function of a flat parameter vector.
Vector numeric_gradient(const std::function<double(const Vector&)>& f,
                        const Vector& at, double eps);

// max_i |a_i - n_i| / max(0.5 (|a_i| + |n_i|), 1e-5)
double max_relative_error(const Vector& analytic, const Vector& numeric);

// Checks backward() against central differences on the probe loss
// sum(forward(x)). The second overload checks a caller-supplied gradient.
double grad_check(const MlpNet& net, const Vector& x, double eps);
double grad_check(const MlpNet& net, const Vector& x, double eps,
                  const GradientSet& analytic);

}  // namespace aeail
