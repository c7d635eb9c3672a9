#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nashdiff/config.hpp"
#include "nashdiff/diffusion.hpp"
#include "nashdiff/domain.hpp"
#include "nashdiff/encoder.hpp"
#include "nashdiff/oracle.hpp"

namespace nashdiff {

// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled
// by exactly one call; callers write into preallocated slots.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

DatasetSplit load_or_generate(const ExperimentConfig& cfg);

// Loads cfg.checkpoint when set, otherwise trains on `data` (log rows are
// appended to *log when given).
Model obtain_model(const ExperimentConfig& cfg, const DatasetSplit& data, std::vector<LossLogRow>* log = nullptr);

// Encoder plus a direct 2-output regression head trained with squared error
// on reference utilities.
struct SupervisedModel {
  EncoderParams encoder;
  LinearParams head;

  explicit SupervisedModel(EncoderConfig cfg = {});
  void init(std::uint64_t seed);
  std::vector<Parameter*> parameters();
  UtilityVector predict(const NegotiationInstance& inst) const;
};

std::vector<LossLogRow> train_supervised(const DatasetSplit& data, SupervisedModel& model, const TrainConfig& cfg);

// One sample per instance per ensemble member; ensemble member k > 0 uses the
// sampler seed derive_seed(seed, "ensemble", k). Output is ordered
// member-major: all instances for k = 0, then k = 1, ...
std::vector<UtilityVector> sample_instances(std::span<const NegotiationInstance> instances, const Model& model,
                                            const SamplerConfig& sampler, const GuidanceConfig* guidance,
                                            int jobs = 1, int ensemble = 1);

// Samples for a non-supervised mode on a trained model (projection applies
// one frontier projection to each unguided sample).
std::vector<UtilityVector> sample_mode(std::span<const NegotiationInstance> instances, const Model& model,
                                       const ExperimentConfig& cfg);

struct ExperimentResult {
  MetricsReport metrics;
  std::vector<NegotiationInstance> instances;  // repeated per ensemble member
  std::vector<UtilityVector> samples;
};

// Full pipeline: data, training or checkpoint, sampling on the test split,
// evaluation. Writes config.json, metrics.json, samples.csv and, when a model
// was trained, model.json plus loss_log.csv into cfg.out_dir (skipped when
// out_dir is empty).
ExperimentResult run_experiment(ExperimentConfig cfg);

std::string samples_csv(std::span<const NegotiationInstance> instances, std::span<const UtilityVector> samples);

// ---- grid search ---------------------------------------------------------

struct GridSearchSpec {
  std::vector<double> lambda{0.35};
  std::vector<double> t_start{0.25};
  std::vector<double> alpha{10.0};
  std::vector<double> beta{8.0};
  std::vector<double> gamma{15.0};
  std::vector<int> steps{15};

  std::size_t cells() const;
  void validate() const;
  // `n` evenly spaced values over [lo, hi].
  static std::vector<double> linspace(double lo, double hi, int n);
};

struct GridCell {
  std::size_t index = 0;
  GuidanceConfig guidance;
  int steps = 15;
  MetricsReport metrics;
  double composite = 0.0;
};

// 0.40*IR + 0.35*efficiency + 0.15*Nash + 0.10*(1 - frontier distance).
double composite_objective(const MetricsReport& m);

// Sorted by composite descending, ties by cell index.
std::vector<GridCell> rank_cells(std::vector<GridCell> cells);

inline constexpr int kGridMetrics = 4;  // IR, Nash product, efficiency, frontier distance

struct SensitivityRow {
  std::string parameter;
  double score = 0.0;  // mean over metrics of (range of per-value means) / (their mean)
  std::array<double, kGridMetrics> spearman{};  // NaN when the parameter or metric is constant
};

struct GridResult {
  std::vector<GridCell> cells;   // grid order
  std::vector<GridCell> ranked;
  std::vector<SensitivityRow> sensitivity;
};

GridResult grid_search(const GridSearchSpec& spec, const Model& model, std::span<const NegotiationInstance> val,
                       const ExperimentConfig& base);

std::vector<double> ranks(std::span<const double> xs);  // average ranks for ties, 1-based
double pearson(std::span<const double> x, std::span<const double> y);
double spearman(std::span<const double> x, std::span<const double> y);
std::vector<SensitivityRow> sensitivity(std::span<const GridCell> cells);

std::string grid_csv(std::span<const GridCell> ranked);
std::string sensitivity_csv(std::span<const SensitivityRow> rows);

// ---- theory suite --------------------------------------------------------

struct TheoryConfig {
  int starts = 1000;
  int max_iters = 500;
  double beta = 50.0;
  double lambda = 0.35;
  int regression_instances = 50;
  std::uint64_t seed = 42;
};

struct TheoryCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

// (a) IR entry from infeasible starts; (b) terminal clean-estimate return;
// (c) drift clamp containment. Uses `model` when given, otherwise a freshly
// initialised one.
std::vector<TheoryCheck> theory_suite(const TheoryConfig& cfg, const Model* model = nullptr);

struct IrEntryStats {
  int starts = 0;
  int entered = 0;
  int max_iters_used = 0;
};
IrEntryStats ir_entry_property(const TheoryConfig& cfg, const GuidanceConfig& guidance);

struct TerminalReturnStats {
  int instances = 0;
  int terminal_matches = 0;  // fixed sampler returns the guided clean estimate exactly
  double ir_fixed = 0.0;
  double ir_legacy = 0.0;
};
TerminalReturnStats terminal_return_regression(const Model& model, std::span<const NegotiationInstance> instances,
                           const GuidanceConfig& guidance, const SamplerConfig& sampler);

struct DriftClampStats {
  double max_latent_clamped = 0.0;
  double max_latent_unclamped = 0.0;
  double c_drift = 0.0;
};
// Crafted scenario: denoiser output bias raised so eps_hat is large, guidance
// always on with a large step, disagreement near the ball boundary.
DriftClampStats drift_clamp_regression(const Model& model, const SamplerConfig& sampler);

// ---- trajectories ----------------------------------------------------------

std::string trajectory_csv(const std::vector<TrajectoryStep>& steps);

// Writes trajectory_<id>_guided.csv and trajectory_<id>_unguided.csv for the
// first `count` instances plus trajectory_aggregate.csv (mean and std per step
// over the guided runs, S rows). Returns the written paths.
std::vector<std::filesystem::path> export_trajectories(std::span<const NegotiationInstance> instances,
                                                       const Model& model, const ExperimentConfig& cfg,
                                                       std::size_t count, const std::filesystem::path& out_dir);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace nashdiff
