#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nashdiff/domain.hpp"
#include "nashdiff/vec2.hpp"

namespace nashdiff {

// (u1 - d1)(u2 - d2); negative outside the IR region.
double nash_product(UtilityVector u, Vec2 d);

struct FeasibleSet {
  double radius = 1.0;
  Vec2 disagreement;

  // u >= 0 and |u| <= r.
  bool in_ball(UtilityVector u, double tol = 0.0) const;
  // u_i >= d_i for both agents (weak inequality).
  bool in_ir_region(UtilityVector u) const;
};

struct NbsOptions {
  int grid_points = 1024;
  double theta_tolerance = 1e-10;
};

// Maximizes the Nash product over the IR-feasible sub-arc of the circular
// frontier by coarse grid bracketing followed by golden-section refinement.
// Throws InfeasibleInstance if the sub-arc is empty.
UtilityVector solve_nbs(const FeasibleSet& fs, const NbsOptions& opts = {});

// Clamp negatives, then rescale onto the ball if outside.
UtilityVector project_feasible(UtilityVector u, double radius);

// Nearest point of the quarter-circle frontier arc {|u| = r, u >= 0}.
UtilityVector project_to_frontier(UtilityVector u, double radius);

// Outward overshoot max(0, |u| - r).
double frontier_distance(UtilityVector u, double radius);

struct MetricsReport {
  double ir_compliance = 0.0;
  double mean_nash_product = 0.0;
  double mean_oracle_nash_product = 0.0;
  double nash_efficiency = 0.0;  // ratio of means
  double mean_frontier_distance = 0.0;
  std::size_t n_samples = 0;
  std::vector<double> nash_products;        // per sample
  std::vector<double> oracle_nash_products; // per sample
  std::vector<double> efficiency_ratios;    // per sample, diagnostics only
};

MetricsReport evaluate(std::span<const UtilityVector> samples,
                       std::span<const NegotiationInstance> instances);

// Fixed-order pairwise summation.
double pairwise_sum(std::span<const double> xs);

struct WilcoxonResult {
  double statistic = 0.0;  // W+, sum of ranks of positive differences
  double p_value = 1.0;    // two-sided
  std::size_t n = 0;       // non-zero differences
  bool exact = false;
};

inline constexpr std::size_t kWilcoxonExactBelow = 25;

// Paired two-sided signed-rank test. Exact null distribution for n < 25
// (midranks for ties), tie-corrected normal approximation otherwise.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y);
WilcoxonResult wilcoxon_signed_rank_normal(std::span<const double> x, std::span<const double> y);
WilcoxonResult wilcoxon_signed_rank_exact(std::span<const double> x, std::span<const double> y);

std::string metrics_to_json(const MetricsReport& m, int indent = 2);
std::string metrics_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

}  // namespace nashdiff
