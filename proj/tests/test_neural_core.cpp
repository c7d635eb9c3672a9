#include <doctest.h>

#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>

#include "nashdiff/checkpoint.hpp"
#include "nashdiff/errors.hpp"
#include "nashdiff/layers.hpp"
#include "nashdiff/optim.hpp"
#include "nashdiff/rng.hpp"
#include "nashdiff/tensor.hpp"
#include "support.hpp"

using namespace nashdiff;
using testsupport::fd;
using testsupport::rel_error;

namespace {

constexpr int kTrials = 100;
constexpr double kTol = 1e-5;

Tensor2D random_tensor(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
  Tensor2D t(r, c);
  for (double& v : t.data()) v = scale * rng.normal();
  return t;
}

// Away from the kink at zero for piecewise activations.
Tensor2D random_off_kink(Rng& rng, std::size_t r, std::size_t c) {
  Tensor2D t(r, c);
  for (double& v : t.data()) {
    do {
      v = 2.0 * rng.normal();
    } while (std::abs(v) < 1e-3);
  }
  return t;
}

double weighted_sum(const Tensor2D& y, const Tensor2D& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * w.data()[i];
  return s;
}

// Compares analytic input gradients of loss = sum(W * f(X)) with finite differences.
double input_grad_error(Tensor2D x, const Tensor2D& w, const std::function<Tensor2D(const Tensor2D&)>& f,
                        const Tensor2D& analytic) {
  std::vector<double> num(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    num[i] = fd([&] { return weighted_sum(f(x), w); }, x.data()[i]);
  return rel_error(analytic.data(), num);
}

double param_grad_error(std::vector<Parameter*> params, const std::function<double()>& loss) {
  std::vector<double> a, n;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      a.push_back(p->grad.data()[i]);
      n.push_back(fd(loss, p->value.data()[i]));
    }
  }
  return rel_error(a, n);
}

void check_activation(const char* name, const std::function<std::pair<Tensor2D, ActivationCache>(const Tensor2D&)>& fwd,
                      const std::function<Tensor2D(const Tensor2D&, const ActivationCache&)>& bwd, bool off_kink,
                      std::int64_t min_cols = 1) {
  Rng rng(derive_seed(101, name));
  double worst = 0.0;
  for (int t = 0; t < kTrials; ++t) {
    const auto r = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto c = static_cast<std::size_t>(rng.uniform_int(min_cols, 6));
    const Tensor2D x = off_kink ? random_off_kink(rng, r, c) : random_tensor(rng, r, c, 2.0);
    const Tensor2D w = random_tensor(rng, r, c);
    auto [y, cache] = fwd(x);
    const Tensor2D g = bwd(w, cache);
    worst = std::max(worst, input_grad_error(x, w, [&](const Tensor2D& z) { return fwd(z).first; }, g));
  }
  CHECK_MESSAGE(worst <= kTol, std::string(name) << " worst relative error " << worst);
}

}  // namespace

TEST_CASE("rng is counter based and reproducible") {
  Rng a(1), b(1), c(2);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  CHECK(a.counter() == 10);
  CHECK(derive_seed(42, "init") != derive_seed(42, "latent"));
  CHECK(derive_seed(42, "init") == derive_seed(42, "init"));
  Rng r(3);
  double s = 0, s2 = 0, u = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
    u += r.uniform();
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.02);
  CHECK(std::abs(u / n - 0.5) < 0.01);
  for (int i = 0; i < 1000; ++i) {
    const auto k = r.uniform_int(-3, 3);
    CHECK(k >= -3);
    CHECK(k <= 3);
  }
}

TEST_CASE("tensor helpers") {
  const Tensor2D a(2, 2, {1, 2, 3, 4});
  const Tensor2D b(2, 1, {5, 6});
  const Tensor2D* parts[] = {&a, &b};
  const auto c = hconcat(parts);
  CHECK(c == Tensor2D(2, 3, {1, 2, 5, 3, 4, 6}));
  CHECK(column_slice(c, 1, 2) == Tensor2D(2, 2, {2, 5, 4, 6}));
  CHECK_THROWS_AS(column_slice(c, 2, 2), ShapeError);
  const Tensor2D d(3, 1);
  const Tensor2D* bad[] = {&a, &d};
  CHECK_THROWS_AS(hconcat(bad), ShapeError);
  CHECK_THROWS_AS(Tensor2D(2, 2, std::vector<double>{1.0}), ShapeError);
  Tensor2D e(1, 2, {1.0, NAN});
  CHECK_THROWS_AS(e.check_finite("e"), NumericError);
}

TEST_CASE("linear gradients") {
  Rng rng(11);
  double wx = 0, wp = 0;
  for (int t = 0; t < kTrials; ++t) {
    const auto B = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto in = static_cast<std::size_t>(rng.uniform_int(1, 6));
    const auto out = static_cast<std::size_t>(rng.uniform_int(1, 6));
    LinearParams p("lin", in, out, t % 2 == 0);
    p.init(rng);
    const Tensor2D x = random_tensor(rng, B, in);
    const Tensor2D w = random_tensor(rng, B, out);
    auto params = p.parameters();
    zero_grads(params);
    auto [y, cache] = forward_linear(x, p);
    const Tensor2D gx = backward_linear(w, cache, p);
    wx = std::max(wx, input_grad_error(x, w, [&](const Tensor2D& z) { return forward_linear(z, p).first; }, gx));
    wp = std::max(wp, param_grad_error(params, [&] { return weighted_sum(forward_linear(x, p).first, w); }));
  }
  CHECK(wx <= kTol);
  CHECK(wp <= kTol);
}

TEST_CASE("layernorm gradients") {
  Rng rng(12);
  double wx = 0, wp = 0;
  for (int t = 0; t < kTrials; ++t) {
    const auto B = static_cast<std::size_t>(rng.uniform_int(1, 4));
    const auto n = static_cast<std::size_t>(rng.uniform_int(2, 8));
    LayerNormParams p("ln", n);
    for (double& g : p.gamma.value.data()) g = rng.uniform(0.5, 1.5);
    for (double& b : p.beta.value.data()) b = rng.normal();
    const Tensor2D x = random_tensor(rng, B, n, 2.0);
    const Tensor2D w = random_tensor(rng, B, n);
    auto params = p.parameters();
    zero_grads(params);
    auto [y, cache] = forward_layernorm(x, p);
    const Tensor2D gx = backward_layernorm(w, cache, p);
    wx = std::max(wx,
                  input_grad_error(x, w, [&](const Tensor2D& z) { return forward_layernorm(z, p).first; }, gx));
    wp = std::max(wp, param_grad_error(params, [&] { return weighted_sum(forward_layernorm(x, p).first, w); }));
  }
  CHECK(wx <= kTol);
  CHECK(wp <= kTol);
}

TEST_CASE("layernorm normalises rows") {
  LayerNormParams p("ln", 4);
  auto [y, c] = forward_layernorm(Tensor2D(1, 4, {1, 2, 3, 4}), p);
  double mean = 0, var = 0;
  for (double v : y.data()) mean += v / 4;
  for (double v : y.data()) var += (v - mean) * (v - mean) / 4;
  CHECK(std::abs(mean) < 1e-12);
  CHECK(var == doctest::Approx(1.25 / (1.25 + kLayerNormEps)).epsilon(1e-12));
}

TEST_CASE("activation gradients") {
  check_activation("silu", [](const Tensor2D& x) { return forward_silu(x); },
                   [](const Tensor2D& g, const ActivationCache& c) { return backward_silu(g, c); }, false);
  check_activation("leakyrelu", [](const Tensor2D& x) { return forward_leakyrelu(x); },
                   [](const Tensor2D& g, const ActivationCache& c) { return backward_leakyrelu(g, c); }, true);
  check_activation("elu", [](const Tensor2D& x) { return forward_elu(x); },
                   [](const Tensor2D& g, const ActivationCache& c) { return backward_elu(g, c); }, true);
  check_activation("softmax", [](const Tensor2D& x) { return forward_softmax_rows(x); },
                   [](const Tensor2D& g, const ActivationCache& c) { return backward_softmax_rows(g, c); }, false, 2);
  // A single column is constant 1, so its gradient vanishes.
  const Tensor2D one(3, 1, std::vector<double>{0.4, -2.0, 7.0});
  const auto [y, cache] = forward_softmax_rows(one);
  CHECK(y == Tensor2D(3, 1, 1.0));
  CHECK(backward_softmax_rows(Tensor2D(3, 1, std::vector<double>{1.0, 2.0, 3.0}), cache) == Tensor2D(3, 1, 0.0));
}

TEST_CASE("activation values") {
  const Tensor2D x(1, 3, {-1.0, 0.0, 2.0});
  const auto s = forward_silu(x).first;
  CHECK(s(0, 0) == doctest::Approx(-1.0 / (1.0 + std::exp(1.0))));
  CHECK(s(0, 2) == doctest::Approx(2.0 / (1.0 + std::exp(-2.0))));
  const auto l = forward_leakyrelu(x).first;
  CHECK(l(0, 0) == doctest::Approx(-0.2));
  CHECK(l(0, 2) == 2.0);
  const auto e = forward_elu(x).first;
  CHECK(e(0, 0) == doctest::Approx(std::exp(-1.0) - 1.0));
  const auto sm = forward_softmax_rows(Tensor2D(1, 2, {1000.0, 1000.0})).first;
  CHECK(sm(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("sinusoidal embedding layout") {
  const auto e = sinusoidal_embedding(500, 1000, 4);
  REQUIRE(e.size() == 4);
  CHECK(e[0] == doctest::Approx(std::sin(0.5)));
  CHECK(e[1] == doctest::Approx(std::sin(0.005)));
  CHECK(e[2] == doctest::Approx(std::cos(0.5)));
  CHECK(e[3] == doctest::Approx(std::cos(0.005)));
  CHECK_THROWS_AS(sinusoidal_embedding(1, 1000, 3), ShapeError);
  CHECK_THROWS_AS(sinusoidal_embedding(1001, 1000, 4), ShapeError);
}

TEST_CASE("time embedding gradients") {
  Rng rng(13);
  double worst = 0;
  for (int t = 0; t < kTrials; ++t) {
    TimeEmbeddingParams p(8);
    p.init(rng);
    const int B = static_cast<int>(rng.uniform_int(1, 3));
    std::vector<int> ts;
    for (int b = 0; b < B; ++b) ts.push_back(static_cast<int>(rng.uniform_int(1, 1000)));
    const Tensor2D w = random_tensor(rng, static_cast<std::size_t>(B), 8);
    auto params = p.parameters();
    zero_grads(params);
    auto [y, cache] = time_embedding(ts, 1000, p);
    time_embedding_backward(w, cache, p);
    worst = std::max(worst, param_grad_error(params, [&] { return weighted_sum(time_embedding(ts, 1000, p).first, w); }));
  }
  CHECK(worst <= kTol);
}

TEST_CASE("backward rejects missing and stale caches") {
  Rng rng(14);
  LinearParams p("lin", 3, 2);
  p.init(rng);
  CHECK_THROWS_AS(backward_linear(Tensor2D(1, 2), LinearCache{}, p), NumericError);
  auto [y, cache] = forward_linear(Tensor2D(1, 3, {1, 2, 3}), p);
  auto params = p.parameters();
  zero_grads(params);
  AdamW opt(params, AdamWConfig{});
  opt.step();
  CHECK_THROWS_AS(backward_linear(Tensor2D(1, 2), cache, p), NumericError);
  CHECK_THROWS_AS(forward_linear(Tensor2D(1, 4), p), ShapeError);
}

TEST_CASE("adamw update matches the written-out rule") {
  Parameter p("w", 1, 1);
  p.value(0, 0) = 1.0;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  cfg.horizon = 4;
  AdamW opt({&p}, cfg);
  double w = 1.0, m = 0.0, v = 0.0;
  const double grads[] = {0.5, -0.25, 1.0};
  for (int k = 0; k < 3; ++k) {
    p.grad(0, 0) = grads[k];
    opt.step();
    const double lr = 0.5 * 0.1 * (1 + std::cos(std::numbers::pi * k / 4.0));
    m = 0.9 * m + 0.1 * grads[k];
    v = 0.999 * v + 0.001 * grads[k] * grads[k];
    const double mh = m / (1 - std::pow(0.9, k + 1));
    const double vh = v / (1 - std::pow(0.999, k + 1));
    w = w - lr * 0.01 * w;
    w = w - lr * mh / (std::sqrt(vh) + 1e-8);
    CHECK(p.value(0, 0) == doctest::Approx(w).epsilon(1e-14));
  }
  CHECK(p.version == 3);
  CHECK(opt.steps_taken() == 3);
}

TEST_CASE("cosine schedule endpoints") {
  Parameter p("w", 1, 1);
  AdamWConfig cfg;
  cfg.lr = 1e-3;
  cfg.horizon = 100;
  AdamW opt({&p}, cfg);
  CHECK(opt.lr_at(0) == doctest::Approx(1e-3));
  CHECK(opt.lr_at(50) == doctest::Approx(5e-4));
  CHECK(opt.lr_at(100) == doctest::Approx(0.0));
  CHECK(opt.lr_at(250) == doctest::Approx(0.0));
  cfg.horizon = 0;
  CHECK_THROWS_AS(AdamW({&p}, cfg), ConfigError);
}

TEST_CASE("checkpoint round trip and validation") {
  const auto dir = testsupport::scratch_dir("ckpt");
  Rng rng(15);
  LinearParams a("a", 3, 2);
  a.init(rng);
  a.weight.value(0, 0) = 0.1 + 1e-17;
  auto pa = a.parameters();
  save_checkpoint(dir / "c.json", pa, 99, {{"note", "x"}});
  LinearParams b("a", 3, 2);
  auto pb = b.parameters();
  const auto meta = load_checkpoint(dir / "c.json", pb);
  CHECK(meta.at("seed").get<std::uint64_t>() == 99);
  CHECK(meta.at("note") == "x");
  CHECK(b.weight.value == a.weight.value);
  CHECK(b.bias.value == a.bias.value);
  CHECK(b.weight.version == 1);

  LinearParams wrong_shape("a", 4, 2);
  auto pw = wrong_shape.parameters();
  CHECK_THROWS_AS(load_checkpoint(dir / "c.json", pw), ValidationError);
  LinearParams wrong_name("z", 3, 2);
  auto pn = wrong_name.parameters();
  CHECK_THROWS_AS(load_checkpoint(dir / "c.json", pn), ValidationError);
  {
    std::ofstream out(dir / "bad.json");
    out << R"({"format":"other","seed":1,"meta":{},"arrays":[]})";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.json", pb), ValidationError);
  CHECK_THROWS_AS(load_checkpoint(dir / "absent.json", pb), ConfigError);
}
