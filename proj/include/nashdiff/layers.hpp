#pragma once

// Closed layer set with hand-written reverse-mode gradients. Every forward_*
// returns its output and a cache; the matching backward_* consumes the cache,
// returns the input gradient and accumulates parameter gradients.

#include <cstdint>
#include <utility>
#include <vector>

#include "nashdiff/rng.hpp"
#include "nashdiff/tensor.hpp"

namespace nashdiff {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kLeakySlope = 0.2;

struct LinearParams {
  Parameter weight;  // out x in
  Parameter bias;    // 1 x out
  bool has_bias = true;

  LinearParams() = default;
  LinearParams(const std::string& name, std::size_t in, std::size_t out, bool with_bias = true);

  std::size_t in_features() const { return weight.value.cols(); }
  std::size_t out_features() const { return weight.value.rows(); }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight and bias.
  void init(Rng& rng);
  std::vector<Parameter*> parameters();
};

struct LinearCache {
  bool valid = false;
  Tensor2D input;
  std::uint64_t weight_version = 0;
  std::uint64_t bias_version = 0;
};

std::pair<Tensor2D, LinearCache> forward_linear(const Tensor2D& x, const LinearParams& p);
Tensor2D backward_linear(const Tensor2D& grad_out, const LinearCache& cache, LinearParams& p);

struct LayerNormParams {
  Parameter gamma;  // 1 x dim, initialized to 1
  Parameter beta;   // 1 x dim, initialized to 0
  double eps = kLayerNormEps;

  LayerNormParams() = default;
  LayerNormParams(const std::string& name, std::size_t dim);
  std::vector<Parameter*> parameters();
};

struct LayerNormCache {
  bool valid = false;
  Tensor2D normalized;
  std::vector<double> inv_std;
  std::uint64_t gamma_version = 0;
};

std::pair<Tensor2D, LayerNormCache> forward_layernorm(const Tensor2D& x, const LayerNormParams& p);
Tensor2D backward_layernorm(const Tensor2D& grad_out, const LayerNormCache& cache, LayerNormParams& p);

// Elementwise activations keep their input (and output where cheaper).
struct ActivationCache {
  bool valid = false;
  Tensor2D input;
  Tensor2D output;
};

std::pair<Tensor2D, ActivationCache> forward_silu(const Tensor2D& x);
Tensor2D backward_silu(const Tensor2D& grad_out, const ActivationCache& cache);

std::pair<Tensor2D, ActivationCache> forward_leakyrelu(const Tensor2D& x, double slope = kLeakySlope);
Tensor2D backward_leakyrelu(const Tensor2D& grad_out, const ActivationCache& cache,
                            double slope = kLeakySlope);

std::pair<Tensor2D, ActivationCache> forward_elu(const Tensor2D& x);
Tensor2D backward_elu(const Tensor2D& grad_out, const ActivationCache& cache);

std::pair<Tensor2D, ActivationCache> forward_softmax_rows(const Tensor2D& x);
Tensor2D backward_softmax_rows(const Tensor2D& grad_out, const ActivationCache& cache);

// Raw sinusoidal features of t/T: sin block for j = 0..dim/2-1 with
// w_j = 10000^(-2j/dim), then the matching cos block.
std::vector<double> sinusoidal_embedding(int t, int T, int dim);

// Sinusoid followed by Linear -> SiLU -> Linear.
struct TimeEmbeddingParams {
  int dim = 32;
  LinearParams proj1;
  LinearParams proj2;

  TimeEmbeddingParams() = default;
  explicit TimeEmbeddingParams(int dim);
  void init(Rng& rng);
  std::vector<Parameter*> parameters();
};

struct TimeEmbeddingCache {
  Tensor2D raw;
  LinearCache l1;
  ActivationCache act;
  LinearCache l2;
};

std::pair<Tensor2D, TimeEmbeddingCache> time_embedding(std::span<const int> ts, int T,
                                                       const TimeEmbeddingParams& p);
// Time is not differentiable; only parameter gradients are accumulated.
void time_embedding_backward(const Tensor2D& grad_out, const TimeEmbeddingCache& cache,
                             TimeEmbeddingParams& p);

void zero_grads(std::span<Parameter* const> params);

}  // namespace nashdiff
