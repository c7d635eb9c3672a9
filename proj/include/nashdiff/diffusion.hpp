#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nashdiff/domain.hpp"
#include "nashdiff/encoder.hpp"
#include "nashdiff/guidance.hpp"
#include "nashdiff/layers.hpp"
#include "nashdiff/optim.hpp"
#include "nashdiff/vec2.hpp"

namespace nashdiff {

// Linear beta schedule with cumulative products; alpha_bar(0) = 1.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(int T = 1000, double beta_first = 1e-4, double beta_last = 0.02);

  int T() const { return T_; }
  double beta(int t) const;
  double alpha_bar(int t) const;

 private:
  int T_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

// u_t = sqrt(abar_t) u0 + sqrt(1 - abar_t) eps, for 1 <= t <= T.
UtilityVector forward_noise(UtilityVector u0, int t, Vec2 eps, const NoiseSchedule& sched);

// Clean estimate clip((u_t - sqrt(1 - abar_t) eps_hat) / sqrt(abar_t), 0, c_max).
UtilityVector recover_clean(UtilityVector u_t, int t, Vec2 eps_hat, const NoiseSchedule& sched, double c_max);

// DDIM update to t_next followed by the componentwise drift clamp. A
// non-positive c_drift disables the clamp.
UtilityVector ddim_step(UtilityVector u0_guided, Vec2 eps_hat, int t, int t_next, const NoiseSchedule& sched,
                        double c_drift);

struct DenoiserConfig {
  int n = kNumAgents;
  int time_dim = 32;
  int embed_dim = 64;
  int hidden = 256;
  double c_out = 0.1;

  int input_dim() const { return n + time_dim + embed_dim; }
};

// [u_t || t_emb || h] -> Linear -> LN+SiLU -> Linear -> LN+SiLU -> Linear, scaled by c_out.
struct DenoiserParams {
  DenoiserConfig cfg;
  TimeEmbeddingParams time;
  LinearParams l1, l2, l3;
  LayerNormParams ln1, ln2;

  explicit DenoiserParams(DenoiserConfig cfg = {});
  void init(Rng& rng);
  std::vector<Parameter*> parameters();
};

struct DenoiserCache {
  TimeEmbeddingCache time;
  LinearCache l1, l2, l3;
  LayerNormCache ln1, ln2;
  ActivationCache a1, a2;
};

// Batched noise prediction: u_t is B x 2, h is B x embed_dim.
std::pair<Tensor2D, DenoiserCache> predict_noise_batch(const Tensor2D& u_t, std::span<const int> ts, const Tensor2D& h,
                                                       const DenoiserParams& p, int T);

Vec2 predict_noise(UtilityVector u_t, int t, std::span<const double> h, const DenoiserParams& p, int T);

struct DenoiserInputGrads {
  Tensor2D u_t;  // B x 2
  Tensor2D h;    // B x embed_dim
};

DenoiserInputGrads predict_noise_backward(const Tensor2D& grad_eps, const DenoiserCache& cache, DenoiserParams& p);

// Encoder, denoiser and schedule as one unit.
struct Model {
  EncoderParams encoder;
  DenoiserParams denoiser;
  NoiseSchedule schedule;
  std::uint64_t seed = 0;
  bool ready = false;

  Model(EncoderConfig enc = {}, DenoiserConfig den = {}, NoiseSchedule sched = NoiseSchedule());

  void init(std::uint64_t seed);
  std::vector<Parameter*> parameters();
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);
};

enum class TerminalReturn {
  clean_estimate,  // return the guided clean estimate at the last step
  ddim_output,     // legacy behaviour: DDIM update with abar_next = 0
};

// strided: t_i = T - i*T/S (1000, 933, ..., 67 for S = 15).
// inclusive: S evenly spaced integers from T down to 1.
enum class TimestepGrid { strided, inclusive };

std::string to_string(TimestepGrid g);
TimestepGrid parse_timestep_grid(std::string_view name);

struct SamplerConfig {
  int steps = 15;
  double c_max = 1.2;
  double c_drift = 1.5;
  std::uint64_t seed = 42;
  bool drift_clamp = true;
  TerminalReturn terminal = TerminalReturn::clean_estimate;
  TimestepGrid grid = TimestepGrid::strided;

  void validate() const;
};

std::vector<int> ddim_timesteps(int T, int S, TimestepGrid grid = TimestepGrid::strided);

struct TrajectoryStep {
  int step = 0;
  int t = 0;
  UtilityVector u_t;
  UtilityVector u0_pre;   // clean estimate before guidance
  UtilityVector u0_post;  // after guidance (equal to u0_pre outside the window)
  double grad_norm = 0.0;
  double nash = 0.0;             // Nash product of u0_post
  double frontier_dist = 0.0;    // outward overshoot of u0_post
  bool guided = false;
};

struct SampleResult {
  UtilityVector u;
  std::vector<TrajectoryStep> trajectory;
};

// Initial latent for an instance: N(0, I) drawn from (seed, instance id).
UtilityVector initial_latent(const NegotiationInstance& inst, std::uint64_t seed);

// Guided DDIM inference. guidance == nullptr runs the unguided sampler.
SampleResult sample(const NegotiationInstance& inst, const Model& model, const SamplerConfig& sampler,
                    const GuidanceConfig* guidance, bool trace = false);

// Same as sample() but with an explicit context embedding and initial latent.
SampleResult sample_from(const NegotiationInstance& inst, std::span<const double> h, UtilityVector u_T,
                         const Model& model, const SamplerConfig& sampler, const GuidanceConfig* guidance, bool trace);

struct TrainConfig {
  int epochs = 30;
  int phase1_epochs = 15;
  std::size_t batch_size = 256;
  AdamWConfig optimizer;  // horizon is derived from epochs and batches
  double beta_start = 10.0;
  double beta_end = 50.0;
  GuidanceConfig guidance;  // alpha, gamma, delta, eps, radius used in phase 2
  double c_max = 1.2;
  std::uint64_t seed = 42;

  void validate() const;
};

struct LossLogRow {
  int epoch = 0;
  int phase = 1;
  double mse = 0.0;
  double guide = 0.0;
  double beta = 0.0;
  double lr = 0.0;
};

// IR weight during an epoch: 0 in phase 1, then linear from beta_start at the
// first phase-2 epoch to beta_end at the last.
double phase2_beta(int epoch, const TrainConfig& cfg);

struct BatchItem {
  const NegotiationInstance* instance = nullptr;
  int t = 1;
  Vec2 eps;
};

struct CompositeLoss {
  double mse = 0.0;
  double guide = 0.0;
  double total() const { return mse + guide; }
};

// Mean-over-batch loss; accumulates parameter gradients into `model`. The
// guidance term (weight ir_beta on IR) is added when with_guide is set.
CompositeLoss composite_loss_and_grad(std::span<const BatchItem> batch, Model& model, bool with_guide, double ir_beta,
                                      const TrainConfig& cfg);

using EpochCallback = std::function<void(const LossLogRow&)>;

// Two-phase joint training of encoder and denoiser on the train split.
std::vector<LossLogRow> train(const DatasetSplit& data, Model& model, const TrainConfig& cfg,
                              const EpochCallback& on_epoch = {});

std::string loss_log_csv(const std::vector<LossLogRow>& log);

}  // namespace nashdiff
