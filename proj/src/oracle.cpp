#include "nashdiff/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "nashdiff/errors.hpp"

namespace nashdiff {

double nash_product(UtilityVector u, Vec2 d) { return (u.x - d.x) * (u.y - d.y); }

bool FeasibleSet::in_ball(UtilityVector u, double tol) const {
  return u.x >= -tol && u.y >= -tol && u.norm() <= radius + tol;
}

bool FeasibleSet::in_ir_region(UtilityVector u) const {
  return u.x >= disagreement.x && u.y >= disagreement.y;
}

namespace {

template <class F>
double golden_section_max(F&& f, double lo, double hi, double tol) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace

UtilityVector solve_nbs(const FeasibleSet& fs, const NbsOptions& opts) {
  const double r = fs.radius;
  const Vec2 d = fs.disagreement;
  if (!(r > 0.0) || !d.finite()) throw InfeasibleInstance("invalid feasible set");
  if (d.x >= r || d.y >= r) throw InfeasibleInstance("disagreement point at or beyond the frontier");
  const double theta_lo = d.y > 0.0 ? std::asin(d.y / r) : 0.0;
  const double theta_hi = d.x > 0.0 ? std::acos(d.x / r) : std::numbers::pi / 2;
  if (!(theta_lo < theta_hi)) throw InfeasibleInstance("IR-feasible frontier arc is empty");

  auto objective = [&](double th) { return (r * std::cos(th) - d.x) * (r * std::sin(th) - d.y); };

  const int n = std::max(opts.grid_points, 3);
  const double step = (theta_hi - theta_lo) / (n - 1);
  int best = 0;
  double best_val = -INFINITY;
  for (int k = 0; k < n; ++k) {
    const double v = objective(theta_lo + k * step);
    if (v > best_val) {
      best_val = v;
      best = k;
    }
  }
  const double lo = theta_lo + std::max(best - 1, 0) * step;
  const double hi = theta_lo + std::min(best + 1, n - 1) * step;
  const double theta = golden_section_max(objective, lo, hi, opts.theta_tolerance);
  return {r * std::cos(theta), r * std::sin(theta)};
}

UtilityVector project_feasible(UtilityVector u, double radius) {
  UtilityVector v{std::max(u.x, 0.0), std::max(u.y, 0.0)};
  const double n = v.norm();
  if (n > radius) v = (radius / n) * v;
  return v;
}

UtilityVector project_to_frontier(UtilityVector u, double radius) {
  UtilityVector v{std::max(u.x, 0.0), std::max(u.y, 0.0)};
  const double n = v.norm();
  if (n == 0.0) return {radius * std::numbers::sqrt2 / 2, radius * std::numbers::sqrt2 / 2};
  return (radius / n) * v;
}

double frontier_distance(UtilityVector u, double radius) { return std::max(0.0, u.norm() - radius); }

double pairwise_sum(std::span<const double> xs) {
  if (xs.size() <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = xs.size() / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

MetricsReport evaluate(std::span<const UtilityVector> samples,
                       std::span<const NegotiationInstance> instances) {
  if (samples.empty()) throw ConfigError("evaluate: empty input");
  if (samples.size() != instances.size()) throw ConfigError("evaluate: samples and instances differ in length");
  const std::size_t n = samples.size();
  MetricsReport m;
  m.n_samples = n;
  m.nash_products.resize(n);
  m.oracle_nash_products.resize(n);
  m.efficiency_ratios.resize(n);
  std::vector<double> ir(n), fdist(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 d = instances[i].disagreement();
    const UtilityVector star = solve_nbs({instances[i].radius, d});
    const FeasibleSet fs{instances[i].radius, d};
    m.nash_products[i] = nash_product(samples[i], d);
    m.oracle_nash_products[i] = nash_product(star, d);
    m.efficiency_ratios[i] = m.nash_products[i] / m.oracle_nash_products[i];
    ir[i] = fs.in_ir_region(samples[i]) ? 1.0 : 0.0;
    fdist[i] = frontier_distance(samples[i], instances[i].radius);
  }
  const double inv = 1.0 / static_cast<double>(n);
  m.ir_compliance = pairwise_sum(ir) * inv;
  m.mean_nash_product = pairwise_sum(m.nash_products) * inv;
  m.mean_oracle_nash_product = pairwise_sum(m.oracle_nash_products) * inv;
  m.nash_efficiency = m.mean_nash_product / m.mean_oracle_nash_product;
  m.mean_frontier_distance = pairwise_sum(fdist) * inv;
  return m;
}

namespace {

struct RankedDiffs {
  std::vector<double> abs_diff;
  std::vector<bool> positive;
  std::vector<double> ranks;  // midranks of |diff|
  double tie_term = 0.0;      // sum of (t^3 - t) over tie groups
};

RankedDiffs rank_differences(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ConfigError("wilcoxon: samples differ in length");
  RankedDiffs r;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - y[i];
    if (!std::isfinite(diff)) throw ValidationError("wilcoxon: non-finite difference");
    if (diff == 0.0) continue;
    r.abs_diff.push_back(std::abs(diff));
    r.positive.push_back(diff > 0.0);
  }
  const std::size_t n = r.abs_diff.size();
  if (n == 0) throw DegenerateInput("wilcoxon: all differences are zero");
  if (n < 6) throw DegenerateInput("wilcoxon: fewer than 6 non-zero differences");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return r.abs_diff[a] < r.abs_diff[b]; });
  r.ranks.assign(n, 0.0);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && r.abs_diff[order[j + 1]] == r.abs_diff[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r.ranks[order[k]] = mid;
    const double t = static_cast<double>(j - i + 1);
    r.tie_term += t * t * t - t;
    i = j + 1;
  }
  return r;
}

double positive_rank_sum(const RankedDiffs& r) {
  double w = 0.0;
  for (std::size_t i = 0; i < r.ranks.size(); ++i)
    if (r.positive[i]) w += r.ranks[i];
  return w;
}

}  // namespace

WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> x, std::span<const double> y) {
  const RankedDiffs r = rank_differences(x, y);
  const std::size_t n = r.ranks.size();
  // Doubled midranks are integers; count sign assignments per doubled sum.
  std::vector<long> doubled(n);
  long total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    doubled[i] = std::lround(2.0 * r.ranks[i]);
    total += doubled[i];
  }
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long reach = 0;
  for (long v : doubled) {
    for (long s = reach; s >= 0; --s)
      if (count[s] != 0.0) count[s + v] += count[s];
    reach += v;
  }
  const double w = positive_rank_sum(r);
  const long w2 = std::lround(2.0 * w);
  double below = 0.0, above = 0.0, all = 0.0;
  for (long s = 0; s <= total; ++s) {
    all += count[s];
    if (s <= w2) below += count[s];
    if (s >= w2) above += count[s];
  }
  WilcoxonResult out;
  out.statistic = w;
  out.n = n;
  out.exact = true;
  out.p_value = std::min(1.0, 2.0 * std::min(below, above) / all);
  return out;
}

WilcoxonResult wilcoxon_signed_rank_normal(std::span<const double> x, std::span<const double> y) {
  const RankedDiffs r = rank_differences(x, y);
  const double n = static_cast<double>(r.ranks.size());
  const double w = positive_rank_sum(r);
  const double mean = n * (n + 1.0) / 4.0;
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - r.tie_term / 48.0;
  WilcoxonResult out;
  out.statistic = w;
  out.n = r.ranks.size();
  out.exact = false;
  if (var <= 0.0) throw DegenerateInput("wilcoxon: zero variance");
  const double z = std::max(0.0, std::abs(w - mean) - 0.5) / std::sqrt(var);
  out.p_value = std::min(1.0, std::erfc(z / std::numbers::sqrt2));
  return out;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
  std::size_t nonzero = 0;
  for (std::size_t i = 0; i < std::min(x.size(), y.size()); ++i)
    if (x[i] != y[i]) ++nonzero;
  return nonzero < kWilcoxonExactBelow ? wilcoxon_signed_rank_exact(x, y)
                                       : wilcoxon_signed_rank_normal(x, y);
}

std::string metrics_to_json(const MetricsReport& m, int indent) {
  nlohmann::json j{{"ir_compliance", m.ir_compliance},
                   {"nash_product", m.mean_nash_product},
                   {"nash_efficiency", m.nash_efficiency},
                   {"frontier_distance", m.mean_frontier_distance},
                   {"oracle_nash_product", m.mean_oracle_nash_product},
                   {"n_samples", m.n_samples}};
  return j.dump(indent);
}

std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-18s %14s %14s %16s %16s\n", "Model", "IR Compliance",
                "Nash Product", "Nash Efficiency", "Frontier Dist.");
  os << buf;
  for (const auto& [name, m] : rows) {
    std::snprintf(buf, sizeof buf, "%-18s %14.4f %14.4f %15.2f%% %16.4f\n", name.c_str(),
                  m.ir_compliance, m.mean_nash_product, 100.0 * m.nash_efficiency,
                  m.mean_frontier_distance);
    os << buf;
  }
  return os.str();
}

}  // namespace nashdiff
