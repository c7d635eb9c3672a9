#include "nashdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "nashdiff/checkpoint.hpp"
#include "nashdiff/errors.hpp"
#include "nashdiff/oracle.hpp"
#include "nashdiff/rng.hpp"

namespace nashdiff {

NoiseSchedule::NoiseSchedule(int T, double beta_first, double beta_last) : T_(T) {
  if (T < 1) throw ConfigError("diffusion T must be >= 1");
  if (!(beta_first > 0.0 && beta_last < 1.0 && beta_first <= beta_last))
    throw ConfigError("beta schedule must satisfy 0 < beta_first <= beta_last < 1");
  betas_.resize(static_cast<std::size_t>(T));
  alpha_bars_.resize(static_cast<std::size_t>(T));
  double prod = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double b = T == 1 ? beta_first : beta_first + (beta_last - beta_first) * (t - 1) / (T - 1.0);
    betas_[static_cast<std::size_t>(t - 1)] = b;
    prod *= 1.0 - b;
    alpha_bars_[static_cast<std::size_t>(t - 1)] = prod;
  }
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > T_) throw ConfigError("timestep out of range");
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  if (t < 0 || t > T_) throw ConfigError("timestep out of range");
  return alpha_bars_[static_cast<std::size_t>(t - 1)];
}

UtilityVector forward_noise(UtilityVector u0, int t, Vec2 eps, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T()) throw ConfigError("forward_noise: t must lie in [1, T]");
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * u0 + std::sqrt(1.0 - ab) * eps;
}

UtilityVector recover_clean(UtilityVector u_t, int t, Vec2 eps_hat, const NoiseSchedule& sched, double c_max) {
  const double ab = sched.alpha_bar(t);
  const UtilityVector raw = (1.0 / std::sqrt(ab)) * (u_t - std::sqrt(1.0 - ab) * eps_hat);
  return {std::clamp(raw.x, 0.0, c_max), std::clamp(raw.y, 0.0, c_max)};
}

UtilityVector ddim_step(UtilityVector u0_guided, Vec2 eps_hat, int t, int t_next, const NoiseSchedule& sched,
                        double c_drift) {
  if (!(t_next < t)) throw ConfigError("ddim_step: t_next must be below t");
  const double ab = sched.alpha_bar(t_next);
  UtilityVector u = std::sqrt(ab) * u0_guided + std::sqrt(1.0 - ab) * eps_hat;
  if (c_drift > 0.0) u = {std::clamp(u.x, -c_drift, c_drift), std::clamp(u.y, -c_drift, c_drift)};
  return u;
}

DenoiserParams::DenoiserParams(DenoiserConfig c)
    : cfg(c),
      time(c.time_dim),
      l1("denoiser.l1", static_cast<std::size_t>(c.input_dim()), static_cast<std::size_t>(c.hidden)),
      l2("denoiser.l2", static_cast<std::size_t>(c.hidden), static_cast<std::size_t>(c.hidden)),
      l3("denoiser.l3", static_cast<std::size_t>(c.hidden), static_cast<std::size_t>(c.n)),
      ln1("denoiser.ln1", static_cast<std::size_t>(c.hidden)),
      ln2("denoiser.ln2", static_cast<std::size_t>(c.hidden)) {}

void DenoiserParams::init(Rng& rng) {
  time.init(rng);
  l1.init(rng);
  l2.init(rng);
  l3.init(rng);
}

std::vector<Parameter*> DenoiserParams::parameters() {
  std::vector<Parameter*> out = time.parameters();
  for (auto* group : {&l1, &l2, &l3})
    for (auto* p : group->parameters()) out.push_back(p);
  for (auto* group : {&ln1, &ln2})
    for (auto* p : group->parameters()) out.push_back(p);
  return out;
}

std::pair<Tensor2D, DenoiserCache> predict_noise_batch(const Tensor2D& u_t, std::span<const int> ts, const Tensor2D& h,
                                                       const DenoiserParams& p, int T) {
  const auto n = static_cast<std::size_t>(p.cfg.n);
  if (u_t.cols() != n || h.cols() != static_cast<std::size_t>(p.cfg.embed_dim) || h.rows() != u_t.rows() ||
      ts.size() != u_t.rows())
    throw ShapeError("predict_noise: input shapes do not match the denoiser configuration");
  DenoiserCache c;
  auto [temb, tc] = time_embedding(ts, T, p.time);
  c.time = std::move(tc);
  const Tensor2D* blocks[] = {&u_t, &temb, &h};
  const Tensor2D z = hconcat(blocks);
  auto [z1, l1] = forward_linear(z, p.l1);
  auto [n1, ln1] = forward_layernorm(z1, p.ln1);
  auto [a1, s1] = forward_silu(n1);
  auto [z2, l2] = forward_linear(a1, p.l2);
  auto [n2, ln2] = forward_layernorm(z2, p.ln2);
  auto [a2, s2] = forward_silu(n2);
  auto [out, l3] = forward_linear(a2, p.l3);
  for (double& v : out.data()) v *= p.cfg.c_out;
  c.l1 = std::move(l1);
  c.ln1 = std::move(ln1);
  c.a1 = std::move(s1);
  c.l2 = std::move(l2);
  c.ln2 = std::move(ln2);
  c.a2 = std::move(s2);
  c.l3 = std::move(l3);
  return {std::move(out), std::move(c)};
}

Vec2 predict_noise(UtilityVector u_t, int t, std::span<const double> h, const DenoiserParams& p, int T) {
  const Tensor2D u(1, 2, {u_t.x, u_t.y});
  const Tensor2D hh = Tensor2D::row_vector(h);
  const int ts[] = {t};
  const auto [eps, cache] = predict_noise_batch(u, ts, hh, p, T);
  return {eps(0, 0), eps(0, 1)};
}

DenoiserInputGrads predict_noise_backward(const Tensor2D& grad_eps, const DenoiserCache& c, DenoiserParams& p) {
  Tensor2D g = grad_eps;
  for (double& v : g.data()) v *= p.cfg.c_out;
  g = backward_linear(g, c.l3, p.l3);
  g = backward_silu(g, c.a2);
  g = backward_layernorm(g, c.ln2, p.ln2);
  g = backward_linear(g, c.l2, p.l2);
  g = backward_silu(g, c.a1);
  g = backward_layernorm(g, c.ln1, p.ln1);
  const Tensor2D gz = backward_linear(g, c.l1, p.l1);
  const auto n = static_cast<std::size_t>(p.cfg.n);
  const auto td = static_cast<std::size_t>(p.cfg.time_dim);
  const auto ed = static_cast<std::size_t>(p.cfg.embed_dim);
  time_embedding_backward(column_slice(gz, n, td), c.time, p.time);
  return {column_slice(gz, 0, n), column_slice(gz, n + td, ed)};
}

Model::Model(EncoderConfig enc, DenoiserConfig den, NoiseSchedule sched)
    : encoder(enc), denoiser(den), schedule(std::move(sched)) {
  if (den.embed_dim != enc.embed_dim) throw ConfigError("denoiser embed_dim must equal encoder embed_dim");
}

void Model::init(std::uint64_t s) {
  seed = s;
  Rng rng(derive_seed(s, "init"));
  encoder.init(rng);
  denoiser.init(rng);
  ready = true;
}

std::vector<Parameter*> Model::parameters() {
  auto out = encoder.parameters();
  auto d = denoiser.parameters();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

void Model::save(const std::filesystem::path& path) const {
  auto params = const_cast<Model*>(this)->parameters();
  const nlohmann::json meta{{"encoder", {{"feat_dim", encoder.cfg.feat_dim}, {"heads", encoder.cfg.heads},
                                         {"embed_dim", encoder.cfg.embed_dim}}},
                            {"denoiser", {{"time_dim", denoiser.cfg.time_dim}, {"hidden", denoiser.cfg.hidden},
                                          {"c_out", denoiser.cfg.c_out}}},
                            {"T", schedule.T()}};
  save_checkpoint(path, params, seed, meta);
}

void Model::load(const std::filesystem::path& path) {
  auto params = parameters();
  const auto meta = load_checkpoint(path, params);
  if (meta.contains("T") && meta.at("T").get<int>() != schedule.T())
    throw ValidationError("checkpoint was trained with a different T");
  if (meta.contains("denoiser") && meta.at("denoiser").value("c_out", denoiser.cfg.c_out) != denoiser.cfg.c_out)
    throw ValidationError("checkpoint was trained with a different c_out");
  seed = meta.at("seed").get<std::uint64_t>();
  ready = true;
}

void SamplerConfig::validate() const {
  if (steps < 1) throw ConfigError("sampler steps must be >= 1");
  if (!(c_max > 0.0)) throw ConfigError("sampler c_max must be > 0");
  if (!(c_drift > 0.0)) throw ConfigError("sampler c_drift must be > 0");
}

std::string to_string(TimestepGrid g) {
  return g == TimestepGrid::strided ? "strided" : "inclusive";
}

TimestepGrid parse_timestep_grid(std::string_view name) {
  if (name == "strided") return TimestepGrid::strided;
  if (name == "inclusive") return TimestepGrid::inclusive;
  throw ConfigError("unknown timestep grid '" + std::string(name) + "' (expected strided or inclusive)");
}

std::vector<int> ddim_timesteps(int T, int S, TimestepGrid grid) {
  if (S < 1 || S > T) throw ConfigError("DDIM steps must lie in [1, T]");
  if (S == 1) return {T};
  std::vector<int> ts(static_cast<std::size_t>(S));
  for (int i = 0; i < S; ++i) {
    const double t = grid == TimestepGrid::strided ? T - i * static_cast<double>(T) / S
                                                   : T - i * (T - 1.0) / (S - 1.0);
    ts[static_cast<std::size_t>(i)] = std::max(1, static_cast<int>(std::lround(t)));
  }
  return ts;
}

UtilityVector initial_latent(const NegotiationInstance& inst, std::uint64_t seed) {
  Rng rng(derive_seed(derive_seed(seed, "latent"), inst.id));
  const double a = rng.normal();
  const double b = rng.normal();
  return {a, b};
}

SampleResult sample(const NegotiationInstance& inst, const Model& model, const SamplerConfig& sampler,
                    const GuidanceConfig* guidance, bool trace) {
  if (!model.ready) throw ConfigError("sample: model parameters are not initialized or loaded");
  const auto [h, cache] = encode(inst, model.encoder);
  return sample_from(inst, h, initial_latent(inst, sampler.seed), model, sampler, guidance, trace);
}

SampleResult sample_from(const NegotiationInstance& inst, std::span<const double> h, UtilityVector u_T,
                         const Model& model, const SamplerConfig& sampler, const GuidanceConfig* guidance,
                         bool trace) {
  if (!model.ready) throw ConfigError("sample: model parameters are not initialized or loaded");
  sampler.validate();
  if (guidance) guidance->validate();
  const auto& sched = model.schedule;
  const int T = sched.T();
  const auto ts = ddim_timesteps(T, sampler.steps, sampler.grid);
  const Vec2 d = inst.disagreement();
  SampleResult out;
  UtilityVector u = u_T;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const double ab = sched.alpha_bar(t);
    const Vec2 eps_hat = predict_noise(u, t, h, model.denoiser, T);
    UtilityVector u0 = recover_clean(u, t, eps_hat, sched, sampler.c_max);
    const UtilityVector pre = u0;
    double grad_norm = 0.0;
    const bool guided = guidance != nullptr && guidance->active(t, T);
    if (guided) {
      const GuidedStep g = guided_correction(u0, d, ab, *guidance);
      u0 = g.u;
      grad_norm = g.grad_norm;
    }
    if (trace)
      out.trajectory.push_back({static_cast<int>(i), t, u, pre, u0, grad_norm, nash_product(u0, d),
                                frontier_distance(u0, inst.radius), guided});
    if (i + 1 == ts.size()) {
      if (sampler.terminal == TerminalReturn::clean_estimate) {
        out.u = u0;
      } else {
        // abar_next = 0: the update collapses onto eps_hat.
        out.u = eps_hat;
        if (sampler.drift_clamp)
          out.u = {std::clamp(out.u.x, -sampler.c_drift, sampler.c_drift),
                   std::clamp(out.u.y, -sampler.c_drift, sampler.c_drift)};
      }
      break;
    }
    u = ddim_step(u0, eps_hat, t, ts[i + 1], sched, sampler.drift_clamp ? sampler.c_drift : 0.0);
  }
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("training epochs must be >= 1");
  if (phase1_epochs < 0 || phase1_epochs > epochs) throw ConfigError("phase1_epochs must lie in [0, epochs]");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(optimizer.lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(c_max > 0.0)) throw ConfigError("c_max must be > 0");
}

double phase2_beta(int epoch, const TrainConfig& cfg) {
  if (epoch < cfg.phase1_epochs) return 0.0;
  const int n2 = cfg.epochs - cfg.phase1_epochs;
  if (n2 <= 1) return cfg.beta_start;
  const double frac = static_cast<double>(epoch - cfg.phase1_epochs) / (n2 - 1.0);
  return cfg.beta_start + (cfg.beta_end - cfg.beta_start) * std::min(frac, 1.0);
}

CompositeLoss composite_loss_and_grad(std::span<const BatchItem> batch, Model& model, bool with_guide, double ir_beta,
                                      const TrainConfig& cfg) {
  const std::size_t B = batch.size();
  if (B == 0) throw ConfigError("empty batch");
  const auto& sched = model.schedule;
  const auto ed = static_cast<std::size_t>(model.encoder.cfg.embed_dim);

  std::vector<EncoderCache> enc_caches;
  enc_caches.reserve(B);
  Tensor2D H(B, ed), U(B, 2);
  std::vector<int> ts(B);
  for (std::size_t b = 0; b < B; ++b) {
    const auto& item = batch[b];
    if (!item.instance->reference) throw ValidationError("training instance lacks a reference utility");
    auto [h, cache] = encode(*item.instance, model.encoder);
    std::copy(h.begin(), h.end(), H.row(b).begin());
    enc_caches.push_back(std::move(cache));
    const UtilityVector ut = forward_noise(*item.instance->reference, item.t, item.eps, sched);
    U(b, 0) = ut.x;
    U(b, 1) = ut.y;
    ts[b] = item.t;
  }
  auto [eps_hat, dcache] = predict_noise_batch(U, ts, H, model.denoiser, sched.T());

  CompositeLoss loss;
  Tensor2D g_eps(B, 2);
  const double inv_b = 1.0 / static_cast<double>(B);
  GuidanceConfig gcfg = cfg.guidance;
  gcfg.beta = ir_beta;
  for (std::size_t b = 0; b < B; ++b) {
    const Vec2 eps = batch[b].eps;
    const Vec2 pred{eps_hat(b, 0), eps_hat(b, 1)};
    const Vec2 diff = eps - pred;
    loss.mse += (diff.x * diff.x + diff.y * diff.y) * inv_b;
    g_eps(b, 0) = -2.0 * diff.x * inv_b;
    g_eps(b, 1) = -2.0 * diff.y * inv_b;
    if (with_guide) {
      const double ab = sched.alpha_bar(ts[b]);
      const double scale = std::sqrt(1.0 - ab) / std::sqrt(ab);
      const UtilityVector ut{U(b, 0), U(b, 1)};
      const UtilityVector raw = (1.0 / std::sqrt(ab)) * ut - scale * pred;
      const UtilityVector u0{std::clamp(raw.x, 0.0, cfg.c_max), std::clamp(raw.y, 0.0, cfg.c_max)};
      const Vec2 d = batch[b].instance->disagreement();
      loss.guide += guide_loss(u0, d, gcfg) * inv_b;
      const Vec2 g = guide_grad(u0, d, gcfg);
      for (int c = 0; c < 2; ++c) {
        const bool pass = raw[c] > 0.0 && raw[c] < cfg.c_max;
        if (pass) g_eps(b, static_cast<std::size_t>(c)) += -scale * g[c] * inv_b;
      }
    }
  }
  if (!std::isfinite(loss.mse) || !std::isfinite(loss.guide)) {
    std::ostringstream os;
    os << "non-finite training loss (mse=" << loss.mse << ", guide=" << loss.guide << ") in batch of instances";
    for (std::size_t b = 0; b < std::min<std::size_t>(B, 8); ++b) os << ' ' << batch[b].instance->id;
    if (B > 8) os << " ...";
    throw NumericError(os.str());
  }

  const DenoiserInputGrads gin = predict_noise_backward(g_eps, dcache, model.denoiser);
  for (std::size_t b = 0; b < B; ++b) encode_backward(gin.h.row(b), enc_caches[b], model.encoder);
  return loss;
}

std::vector<LossLogRow> train(const DatasetSplit& data, Model& model, const TrainConfig& cfg,
                              const EpochCallback& on_epoch) {
  cfg.validate();
  const auto train_set = data.subset(Split::train);
  if (train_set.empty()) throw ConfigError("training split is empty");
  if (!model.ready) model.init(cfg.seed);

  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  AdamWConfig ocfg = cfg.optimizer;
  ocfg.horizon = batches * static_cast<std::size_t>(cfg.epochs);
  auto params = model.parameters();
  AdamW opt(params, ocfg);
  Rng rng(derive_seed(cfg.seed, "train"));
  const int T = model.schedule.T();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<LossLogRow> log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    const bool phase2 = epoch >= cfg.phase1_epochs;
    const double beta = phase2_beta(epoch, cfg);
    LossLogRow row{epoch, phase2 ? 2 : 1, 0.0, 0.0, beta, opt.current_lr()};
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t lo = bi * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      std::vector<BatchItem> batch;
      batch.reserve(hi - lo);
      for (std::size_t k = lo; k < hi; ++k) {
        BatchItem item;
        item.instance = &train_set[order[k]];
        item.t = static_cast<int>(rng.uniform_int(1, T));
        item.eps.x = rng.normal();
        item.eps.y = rng.normal();
        batch.push_back(item);
      }
      zero_grads(params);
      CompositeLoss l;
      try {
        l = composite_loss_and_grad(batch, model, phase2, beta, cfg);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) + ": " + e.what());
      }
      opt.step();
      const double w = static_cast<double>(hi - lo) / static_cast<double>(n);
      row.mse += w * l.mse;
      row.guide += w * l.guide;
    }
    log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return log;
}

std::string loss_log_csv(const std::vector<LossLogRow>& log) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,phase,l_mse,l_guide,beta,lr\n";
  for (const auto& r : log)
    os << r.epoch << ',' << r.phase << ',' << r.mse << ',' << r.guide << ',' << r.beta << ',' << r.lr << '\n';
  return os.str();
}

}  // namespace nashdiff
