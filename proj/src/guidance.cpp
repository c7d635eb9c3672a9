#include "nashdiff/guidance.hpp"

#include <cmath>

#include "nashdiff/errors.hpp"
#include "nashdiff/oracle.hpp"

namespace nashdiff {

void GuidanceConfig::validate() const {
  if (!(lambda >= 0.0) || !(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0) || !(delta >= 0.0))
    throw ConfigError("guidance weights must be non-negative");
  if (!(t_start > 0.0 && t_start <= 1.0)) throw ConfigError("guidance t_start must lie in (0, 1]");
  if (!(eps > 0.0)) throw ConfigError("guidance eps must be > 0");
  if (!(radius > 0.0)) throw ConfigError("guidance radius must be > 0");
}

bool GuidanceConfig::active(int t, int T) const {
  return t_start >= 1.0 || static_cast<double>(t) / static_cast<double>(T) < t_start;
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double guide_loss(UtilityVector u, Vec2 d, const GuidanceConfig& cfg) {
  double nash = 0.0, ir = 0.0;
  for (int i = 0; i < 2; ++i) {
    nash += std::log(softplus(u[i] - d[i]) + cfg.eps);
    ir += softplus(d[i] - u[i] + cfg.delta);
  }
  const double r2 = cfg.radius * cfg.radius;
  return -cfg.alpha * nash + cfg.beta * ir + cfg.gamma * softplus(u.x * u.x + u.y * u.y - r2);
}

Vec2 guide_grad(UtilityVector u, Vec2 d, const GuidanceConfig& cfg) {
  const double r2 = cfg.radius * cfg.radius;
  const double frontier = 2.0 * cfg.gamma * sigmoid(u.x * u.x + u.y * u.y - r2);
  Vec2 g;
  for (int i = 0; i < 2; ++i) {
    const double s = u[i] - d[i];
    g[i] = -cfg.alpha * sigmoid(s) / (softplus(s) + cfg.eps) - cfg.beta * sigmoid(d[i] - u[i] + cfg.delta) +
           frontier * u[i];
  }
  return g;
}

GuidedStep guided_correction(UtilityVector u0_hat, Vec2 d, double alpha_bar_t, const GuidanceConfig& cfg) {
  const Vec2 g = guide_grad(u0_hat, d, cfg);
  const double w = cfg.lambda * std::sqrt(alpha_bar_t);
  const double gn = g.norm();
  const UtilityVector moved = u0_hat - (w / (gn + cfg.eps)) * g;
  return {project_feasible(moved, cfg.radius), gn};
}

std::optional<int> ir_entry_time(UtilityVector u_start, Vec2 d, const GuidanceConfig& cfg, int max_steps) {
  if (max_steps < 1) throw ConfigError("max_steps must be >= 1");
  UtilityVector u = u_start;
  for (int k = 0; k <= max_steps; ++k) {
    if (u.x >= d.x && u.y >= d.y) return k;
    if (k == max_steps) break;
    u = guided_correction(u, d, 1.0, cfg).u;
  }
  return std::nullopt;
}

}  // namespace nashdiff
