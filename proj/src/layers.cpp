#include "nashdiff/layers.hpp"

#include <algorithm>
#include <cmath>

#include "nashdiff/errors.hpp"

namespace nashdiff {

namespace {

void require_cache(bool valid, const char* layer) {
  if (!valid) throw NumericError(std::string(layer) + ": backward called without a forward cache");
}

void require_version(std::uint64_t cached, std::uint64_t now, const char* layer) {
  if (cached != now) throw NumericError(std::string(layer) + ": stale cache (parameters changed since forward)");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

LinearParams::LinearParams(const std::string& name, std::size_t in, std::size_t out, bool with_bias)
    : weight(name + ".weight", out, in), bias(name + ".bias", 1, out), has_bias(with_bias) {}

void LinearParams::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_features()));
  for (double& w : weight.value.data()) w = rng.uniform(-bound, bound);
  if (has_bias)
    for (double& b : bias.value.data()) b = rng.uniform(-bound, bound);
}

std::vector<Parameter*> LinearParams::parameters() {
  if (has_bias) return {&weight, &bias};
  return {&weight};
}

std::pair<Tensor2D, LinearCache> forward_linear(const Tensor2D& x, const LinearParams& p) {
  const std::size_t in = p.in_features(), out = p.out_features();
  if (x.cols() != in) throw ShapeError("linear " + p.weight.name + ": input width mismatch");
  Tensor2D y(x.rows(), out);
  const auto& W = p.weight.value;
  for (std::size_t b = 0; b < x.rows(); ++b) {
    const auto xr = x.row(b);
    auto yr = y.row(b);
    for (std::size_t o = 0; o < out; ++o) {
      const auto wr = W.row(o);
      double s = p.has_bias ? p.bias.value(0, o) : 0.0;
      for (std::size_t i = 0; i < in; ++i) s += xr[i] * wr[i];
      yr[o] = s;
    }
  }
  y.check_finite("linear output");
  return {std::move(y), LinearCache{true, x, p.weight.version, p.bias.version}};
}

Tensor2D backward_linear(const Tensor2D& grad_out, const LinearCache& cache, LinearParams& p) {
  require_cache(cache.valid, "linear");
  require_version(cache.weight_version, p.weight.version, "linear");
  require_version(cache.bias_version, p.bias.version, "linear");
  const auto& x = cache.input;
  const std::size_t in = p.in_features(), out = p.out_features();
  if (grad_out.rows() != x.rows() || grad_out.cols() != out)
    throw ShapeError("linear " + p.weight.name + ": grad shape mismatch");
  Tensor2D gx(x.rows(), in);
  auto& W = p.weight.value;
  auto& gW = p.weight.grad;
  for (std::size_t b = 0; b < x.rows(); ++b) {
    const auto xr = x.row(b);
    const auto gyr = grad_out.row(b);
    auto gxr = gx.row(b);
    for (std::size_t o = 0; o < out; ++o) {
      const double g = gyr[o];
      if (g == 0.0) continue;
      const auto wr = W.row(o);
      auto gwr = gW.row(o);
      for (std::size_t i = 0; i < in; ++i) {
        gxr[i] += g * wr[i];
        gwr[i] += g * xr[i];
      }
      if (p.has_bias) p.bias.grad(0, o) += g;
    }
  }
  return gx;
}

LayerNormParams::LayerNormParams(const std::string& name, std::size_t dim)
    : gamma(name + ".gamma", 1, dim), beta(name + ".beta", 1, dim) {
  gamma.value.fill(1.0);
}

std::vector<Parameter*> LayerNormParams::parameters() { return {&gamma, &beta}; }

std::pair<Tensor2D, LayerNormCache> forward_layernorm(const Tensor2D& x, const LayerNormParams& p) {
  const std::size_t n = p.gamma.value.cols();
  if (x.cols() != n) throw ShapeError("layernorm " + p.gamma.name + ": input width mismatch");
  LayerNormCache cache{true, Tensor2D(x.rows(), n), std::vector<double>(x.rows()), p.gamma.version};
  Tensor2D y(x.rows(), n);
  for (std::size_t b = 0; b < x.rows(); ++b) {
    const auto xr = x.row(b);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + p.eps);
    cache.inv_std[b] = inv;
    auto nr = cache.normalized.row(b);
    auto yr = y.row(b);
    for (std::size_t i = 0; i < n; ++i) {
      nr[i] = (xr[i] - mean) * inv;
      yr[i] = p.gamma.value(0, i) * nr[i] + p.beta.value(0, i);
    }
  }
  y.check_finite("layernorm output");
  return {std::move(y), std::move(cache)};
}

Tensor2D backward_layernorm(const Tensor2D& grad_out, const LayerNormCache& cache, LayerNormParams& p) {
  require_cache(cache.valid, "layernorm");
  require_version(cache.gamma_version, p.gamma.version, "layernorm");
  const auto& xhat = cache.normalized;
  const std::size_t n = xhat.cols();
  if (!grad_out.same_shape(xhat)) throw ShapeError("layernorm: grad shape mismatch");
  Tensor2D gx(xhat.rows(), n);
  std::vector<double> gxhat(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t b = 0; b < xhat.rows(); ++b) {
    const auto gy = grad_out.row(b);
    const auto xr = xhat.row(b);
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      gxhat[i] = gy[i] * p.gamma.value(0, i);
      sum_g += gxhat[i];
      sum_gx += gxhat[i] * xr[i];
      p.gamma.grad(0, i) += gy[i] * xr[i];
      p.beta.grad(0, i) += gy[i];
    }
    auto gr = gx.row(b);
    const double inv = cache.inv_std[b];
    for (std::size_t i = 0; i < n; ++i) gr[i] = inv * (gxhat[i] - inv_n * sum_g - xr[i] * inv_n * sum_gx);
  }
  return gx;
}

namespace {

template <class F>
std::pair<Tensor2D, ActivationCache> elementwise(const Tensor2D& x, F&& f, const char* what) {
  Tensor2D y(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) y.data()[k] = f(x.data()[k]);
  y.check_finite(what);
  ActivationCache c{true, x, y};
  return {std::move(y), std::move(c)};
}

template <class F>
Tensor2D elementwise_backward(const Tensor2D& grad_out, const ActivationCache& cache, F&& dfdx,
                              const char* what) {
  require_cache(cache.valid, what);
  if (!grad_out.same_shape(cache.input)) throw ShapeError(std::string(what) + ": grad shape mismatch");
  Tensor2D gx(grad_out.rows(), grad_out.cols());
  for (std::size_t k = 0; k < gx.size(); ++k)
    gx.data()[k] = grad_out.data()[k] * dfdx(cache.input.data()[k], cache.output.data()[k]);
  return gx;
}

}  // namespace

std::pair<Tensor2D, ActivationCache> forward_silu(const Tensor2D& x) {
  return elementwise(x, [](double v) { return v * sigmoid(v); }, "silu output");
}

Tensor2D backward_silu(const Tensor2D& grad_out, const ActivationCache& cache) {
  return elementwise_backward(
      grad_out, cache,
      [](double v, double) {
        const double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
      },
      "silu");
}

std::pair<Tensor2D, ActivationCache> forward_leakyrelu(const Tensor2D& x, double slope) {
  return elementwise(x, [slope](double v) { return v > 0.0 ? v : slope * v; }, "leakyrelu output");
}

Tensor2D backward_leakyrelu(const Tensor2D& grad_out, const ActivationCache& cache, double slope) {
  return elementwise_backward(
      grad_out, cache, [slope](double v, double) { return v > 0.0 ? 1.0 : slope; }, "leakyrelu");
}

std::pair<Tensor2D, ActivationCache> forward_elu(const Tensor2D& x) {
  return elementwise(x, [](double v) { return v > 0.0 ? v : std::expm1(v); }, "elu output");
}

Tensor2D backward_elu(const Tensor2D& grad_out, const ActivationCache& cache) {
  return elementwise_backward(
      grad_out, cache, [](double v, double) { return v > 0.0 ? 1.0 : std::exp(v); }, "elu");
}

std::pair<Tensor2D, ActivationCache> forward_softmax_rows(const Tensor2D& x) {
  Tensor2D y(x.rows(), x.cols());
  for (std::size_t b = 0; b < x.rows(); ++b) {
    const auto xr = x.row(b);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double z = 0.0;
    auto yr = y.row(b);
    for (std::size_t i = 0; i < xr.size(); ++i) {
      yr[i] = std::exp(xr[i] - mx);
      z += yr[i];
    }
    for (double& v : yr) v /= z;
  }
  y.check_finite("softmax output");
  ActivationCache c{true, x, y};
  return {std::move(y), std::move(c)};
}

Tensor2D backward_softmax_rows(const Tensor2D& grad_out, const ActivationCache& cache) {
  require_cache(cache.valid, "softmax");
  const auto& y = cache.output;
  if (!grad_out.same_shape(y)) throw ShapeError("softmax: grad shape mismatch");
  Tensor2D gx(y.rows(), y.cols());
  for (std::size_t b = 0; b < y.rows(); ++b) {
    const auto yr = y.row(b);
    const auto gr = grad_out.row(b);
    double dot = 0.0;
    for (std::size_t i = 0; i < yr.size(); ++i) dot += gr[i] * yr[i];
    auto out = gx.row(b);
    for (std::size_t i = 0; i < yr.size(); ++i) out[i] = yr[i] * (gr[i] - dot);
  }
  return gx;
}

std::vector<double> sinusoidal_embedding(int t, int T, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ShapeError("time embedding dimension must be even and positive");
  if (T <= 0 || t < 0 || t > T) throw ShapeError("timestep out of range");
  const int half = dim / 2;
  const double tn = static_cast<double>(t) / static_cast<double>(T);
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int j = 0; j < half; ++j) {
    const double w = std::pow(10000.0, -2.0 * j / static_cast<double>(dim));
    out[static_cast<std::size_t>(j)] = std::sin(tn * w);
    out[static_cast<std::size_t>(half + j)] = std::cos(tn * w);
  }
  return out;
}

TimeEmbeddingParams::TimeEmbeddingParams(int d)
    : dim(d),
      proj1("time.proj1", static_cast<std::size_t>(d), static_cast<std::size_t>(d)),
      proj2("time.proj2", static_cast<std::size_t>(d), static_cast<std::size_t>(d)) {}

void TimeEmbeddingParams::init(Rng& rng) {
  proj1.init(rng);
  proj2.init(rng);
}

std::vector<Parameter*> TimeEmbeddingParams::parameters() {
  auto a = proj1.parameters();
  auto b = proj2.parameters();
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::pair<Tensor2D, TimeEmbeddingCache> time_embedding(std::span<const int> ts, int T,
                                                       const TimeEmbeddingParams& p) {
  TimeEmbeddingCache c;
  c.raw = Tensor2D(ts.size(), static_cast<std::size_t>(p.dim));
  for (std::size_t b = 0; b < ts.size(); ++b) {
    const auto e = sinusoidal_embedding(ts[b], T, p.dim);
    std::copy(e.begin(), e.end(), c.raw.row(b).begin());
  }
  auto [h1, l1] = forward_linear(c.raw, p.proj1);
  auto [a1, act] = forward_silu(h1);
  auto [out, l2] = forward_linear(a1, p.proj2);
  c.l1 = std::move(l1);
  c.act = std::move(act);
  c.l2 = std::move(l2);
  return {std::move(out), std::move(c)};
}

void time_embedding_backward(const Tensor2D& grad_out, const TimeEmbeddingCache& cache,
                             TimeEmbeddingParams& p) {
  const Tensor2D g2 = backward_linear(grad_out, cache.l2, p.proj2);
  const Tensor2D g1 = backward_silu(g2, cache.act);
  backward_linear(g1, cache.l1, p.proj1);
}

void zero_grads(std::span<Parameter* const> params) {
  for (auto* p : params) p->zero_grad();
}

}  // namespace nashdiff
