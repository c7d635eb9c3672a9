#include "nashdiff/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nashdiff/errors.hpp"

namespace nashdiff {

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.horizon == 0) throw ConfigError("AdamW horizon must be >= 1");
  for (const auto* p : params_) {
    if (!p->grad.same_shape(p->value)) throw ShapeError("gradient buffer shape differs for " + p->name);
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

double AdamW::lr_at(std::size_t step) const {
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg_.horizon));
  return 0.5 * cfg_.lr * (1.0 + std::cos(std::numbers::pi * frac));
}

void AdamW::step() {
  const double lr = lr_at(step_);
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& w = params_[k]->value.data();
    const auto& g = params_[k]->grad.data();
    auto& m = m_[k].data();
    auto& v = v_[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * cfg_.weight_decay * w[i];
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
    ++params_[k]->version;
  }
}

}  // namespace nashdiff
