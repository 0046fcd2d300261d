#pragma once

// Gradient self-test: analytic gradients against central differences.

#include <cstdint>

namespace aeail {

struct GradCheckReport {
  int nets_checked = 0;
  double max_net_error = 0.0;
  double ae_w_loss_error = 0.0;
  double ae_js_loss_error = 0.0;
  double vae_loss_error = 0.0;
  double disc_loss_error = 0.0;
  double surrogate_error = 0.0;

  double worst() const;
};

inline constexpr double kGradCheckEps = 1e-5;

// Random nets with 1-3 hidden layers of width 1-16, tanh or identity
// outputs and inputs in [-1, 1], plus small end-to-end reward-model and policy problems.
GradCheckReport run_grad_checks(int n_nets, std::uint64_t seed);

}  // namespace aeail
