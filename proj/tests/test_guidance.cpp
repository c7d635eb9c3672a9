#include <doctest.h>

#include <cmath>

#include "nashdiff/errors.hpp"
#include "nashdiff/guidance.hpp"
#include "nashdiff/oracle.hpp"
#include "nashdiff/rng.hpp"
#include "support.hpp"

using namespace nashdiff;

TEST_CASE("softplus and sigmoid") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)));
  CHECK(softplus(50.0) == 50.0);
  CHECK(softplus(-50.0) > 0.0);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) == 0.0);
  CHECK(sigmoid(800.0) == 1.0);
}

TEST_CASE("guide loss hand value") {
  GuidanceConfig cfg;
  const UtilityVector u{0.6, 0.5};
  const Vec2 d{0.2, 0.3};
  auto sp = [](double x) { return std::log(1.0 + std::exp(x)); };
  const double expect = -10.0 * (std::log(sp(0.4) + 1e-6) + std::log(sp(0.2) + 1e-6)) +
                        8.0 * (sp(-0.4 + 0.05) + sp(-0.2 + 0.05)) + 15.0 * sp(0.36 + 0.25 - 1.0);
  CHECK(guide_loss(u, d, cfg) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("guide gradient matches finite differences including deep violations") {
  Rng rng(31);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    GuidanceConfig cfg;
    if (i % 2 == 1) {
      cfg.alpha = rng.uniform(5.0, 300.0);
      cfg.beta = rng.uniform(0.5, 50.0);
      cfg.gamma = rng.uniform(0.5, 80.0);
    }
    const Vec2 d{rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)};
    // every fourth point sits far below the disagreement point
    const double lo = i % 4 == 0 ? -8.0 : -0.5;
    UtilityVector u{rng.uniform(lo, 1.5), rng.uniform(lo, 1.5)};
    const Vec2 g = guide_grad(u, d, cfg);
    std::vector<double> num(2);
    auto f = [&] { return guide_loss(u, d, cfg); };
    num[0] = testsupport::fd(f, u.x, 1e-5);
    num[1] = testsupport::fd(f, u.y, 1e-5);
    const double an[2] = {g.x, g.y};
    worst = std::max(worst, testsupport::rel_error(an, num));
  }
  CHECK_MESSAGE(worst <= 1e-7, "worst relative error " << worst);
}

TEST_CASE("guided correction takes a normalised step then projects") {
  GuidanceConfig cfg;
  const Vec2 d{0.2, 0.2};
  const UtilityVector u{0.4, 0.3};
  const double abar = 0.81;
  const auto step = guided_correction(u, d, abar, cfg);
  const Vec2 g = guide_grad(u, d, cfg);
  CHECK(step.grad_norm == doctest::Approx(g.norm()));
  const double w = 0.35 * 0.9 / (g.norm() + 1e-6);
  const auto expect = project_feasible(u - w * g, 1.0);
  CHECK(step.u.x == doctest::Approx(expect.x).epsilon(1e-14));
  CHECK(step.u.y == doctest::Approx(expect.y).epsilon(1e-14));
  const auto moved = u - step.u;
  CHECK(moved.norm() <= 0.35 * 0.9 + 1e-12);
  const auto far = guided_correction({3.0, 3.0}, d, 1.0, cfg);
  CHECK(far.u.norm() <= 1.0 + 1e-12);
  CHECK(far.u.x >= 0.0);
}

TEST_CASE("guidance window") {
  GuidanceConfig cfg;
  CHECK(cfg.active(249, 1000));
  CHECK_FALSE(cfg.active(250, 1000));
  cfg.t_start = 1.0;
  CHECK(cfg.active(1000, 1000));
  CHECK(cfg.active(1, 1000));
}

TEST_CASE("guidance validation") {
  GuidanceConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lambda = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.t_start = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.eps = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("IR entry") {
  GuidanceConfig cfg;
  cfg.beta = 50.0;
  const Vec2 d{0.3, 0.2};
  CHECK(ir_entry_time({0.5, 0.5}, d, cfg, 10) == 0);
  const auto k = ir_entry_time({-0.5, 0.0}, d, cfg, 500);
  REQUIRE(k.has_value());
  CHECK(*k >= 1);
  GuidanceConfig none = cfg;
  none.alpha = 0.0;
  none.beta = 0.0;
  CHECK_FALSE(ir_entry_time({0.0, 0.0}, d, none, 500).has_value());
  CHECK_THROWS_AS(ir_entry_time({0.0, 0.0}, d, cfg, 0), ConfigError);
}
