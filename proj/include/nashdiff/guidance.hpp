#pragma once

#include <optional>

#include "nashdiff/vec2.hpp"

namespace nashdiff {

struct GuidanceConfig {
  double lambda = 0.35;   // step size
  double t_start = 0.25;  // guidance active when t/T < t_start (always when >= 1)
  double alpha = 10.0;    // Nash weight
  double beta = 8.0;      // IR weight
  double gamma = 15.0;    // frontier weight
  double delta = 0.05;    // IR margin
  double eps = 1e-6;      // stability constant (log argument and gradient norm)
  double radius = 1.0;

  void validate() const;
  // t_start >= 1 means every reverse step is guided.
  bool active(int t, int T) const;
};

double softplus(double x);
double sigmoid(double x);

// -a*sum log(softplus(u_i - d_i) + eps) + b*sum softplus(d_i - u_i + delta)
//   + g*softplus(|u|^2 - r^2)
double guide_loss(UtilityVector u, Vec2 d, const GuidanceConfig& cfg);

// Closed-form gradient of guide_loss with respect to u.
Vec2 guide_grad(UtilityVector u, Vec2 d, const GuidanceConfig& cfg);

struct GuidedStep {
  UtilityVector u;
  double grad_norm = 0.0;
};

// Normalized gradient step of length lambda*sqrt(abar_t), then projection onto
// the nonnegative ball.
GuidedStep guided_correction(UtilityVector u0_hat, Vec2 d, double alpha_bar_t, const GuidanceConfig& cfg);

// Iterates guided_correction at abar = 1 from u_start; returns the first
// iteration index with u >= d componentwise, or nullopt after max_steps.
std::optional<int> ir_entry_time(UtilityVector u_start, Vec2 d, const GuidanceConfig& cfg, int max_steps);

}  // namespace nashdiff
