#pragma once

#include <cstddef>
#include <vector>

#include "nashdiff/tensor.hpp"

namespace nashdiff {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  std::size_t horizon = 1;  // optimizer steps over which the LR half-cosine decays to 0
};

// AdamW with decoupled weight decay and a half-cosine learning-rate schedule.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg);

  // LR applied at the given 0-based update index; clamped at 0 past the horizon.
  double lr_at(std::size_t step) const;
  double current_lr() const { return lr_at(step_); }
  std::size_t steps_taken() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }

  // Applies one update from the accumulated gradients, then bumps each
  // parameter's version. Gradients are left untouched.
  void step();

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor2D> m_;
  std::vector<Tensor2D> v_;
  AdamWConfig cfg_;
  std::size_t step_ = 0;
};

}  // namespace nashdiff
