#include "nashdiff/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "nashdiff/checkpoint.hpp"
#include "nashdiff/errors.hpp"
#include "nashdiff/layers.hpp"
#include "nashdiff/optim.hpp"
#include "nashdiff/rng.hpp"

namespace nashdiff {

using nlohmann::json;

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < n; i = next++) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
        next = n;
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

DatasetSplit load_or_generate(const ExperimentConfig& cfg) {
  if (!cfg.dataset.path.empty()) return load_dataset(cfg.dataset.path);
  return generate_synthetic(cfg.dataset.count, cfg.seed, cfg.dataset.radius);
}

Model obtain_model(const ExperimentConfig& cfg, const DatasetSplit& data, std::vector<LossLogRow>* log) {
  Model model = cfg.make_model();
  if (!cfg.checkpoint.empty()) {
    if (!std::filesystem::exists(cfg.checkpoint)) throw ConfigError("checkpoint not found: " + cfg.checkpoint);
    model.load(cfg.checkpoint);
    return model;
  }
  model.init(cfg.seed);
  auto rows = train(data, model, cfg.training);
  if (log) log->insert(log->end(), rows.begin(), rows.end());
  return model;
}

// ---- supervised baseline ---------------------------------------------------

SupervisedModel::SupervisedModel(EncoderConfig cfg)
    : encoder(cfg), head("supervised.head", static_cast<std::size_t>(cfg.embed_dim), kNumAgents) {}

void SupervisedModel::init(std::uint64_t seed) {
  Rng rng(derive_seed(seed, "supervised"));
  encoder.init(rng);
  head.init(rng);
}

std::vector<Parameter*> SupervisedModel::parameters() {
  auto out = encoder.parameters();
  out.push_back(&head.weight);
  out.push_back(&head.bias);
  return out;
}

UtilityVector SupervisedModel::predict(const NegotiationInstance& inst) const {
  const auto [h, cache] = encode(inst, encoder);
  const auto [y, lc] = forward_linear(Tensor2D::row_vector(h), head);
  return {y(0, 0), y(0, 1)};
}

std::vector<LossLogRow> train_supervised(const DatasetSplit& data, SupervisedModel& model, const TrainConfig& cfg) {
  cfg.validate();
  const auto train_set = data.subset(Split::train);
  if (train_set.empty()) throw ConfigError("training split is empty");
  for (const auto& inst : train_set)
    if (!inst.reference) throw ConfigError("supervised training needs reference utilities (instance " +
                                           std::to_string(inst.id) + ")");
  const std::size_t n = train_set.size();
  const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
  AdamWConfig ocfg = cfg.optimizer;
  ocfg.horizon = batches * static_cast<std::size_t>(cfg.epochs);
  auto params = model.parameters();
  AdamW opt(params, ocfg);
  Rng rng(derive_seed(cfg.seed, "supervised-train"));
  const auto ed = static_cast<std::size_t>(model.encoder.cfg.embed_dim);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<LossLogRow> log;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    LossLogRow row{epoch, 1, 0.0, 0.0, 0.0, opt.current_lr()};
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const std::size_t lo = bi * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      const std::size_t B = hi - lo;
      zero_grads(params);
      Tensor2D H(B, ed);
      std::vector<EncoderCache> caches;
      caches.reserve(B);
      for (std::size_t b = 0; b < B; ++b) {
        auto [h, c] = encode(train_set[order[lo + b]], model.encoder);
        std::copy(h.begin(), h.end(), H.row(b).begin());
        caches.push_back(std::move(c));
      }
      const auto [y, lc] = forward_linear(H, model.head);
      Tensor2D g(B, kNumAgents);
      double loss = 0.0;
      for (std::size_t b = 0; b < B; ++b) {
        const UtilityVector ref = *train_set[order[lo + b]].reference;
        for (std::size_t k = 0; k < 2; ++k) {
          const double r = y(b, k) - ref[static_cast<int>(k)];
          loss += r * r;
          g(b, k) = 2.0 * r / static_cast<double>(B);
        }
      }
      loss /= static_cast<double>(B);
      if (!std::isfinite(loss))
        throw NumericError("supervised epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) +
                           ": non-finite loss");
      const Tensor2D gh = backward_linear(g, lc, model.head);
      for (std::size_t b = 0; b < B; ++b) encode_backward(gh.row(b), caches[b], model.encoder);
      opt.step();
      row.mse += static_cast<double>(B) / static_cast<double>(n) * loss;
    }
    log.push_back(row);
  }
  return log;
}

// ---- sampling ----------------------------------------------------------------

std::vector<UtilityVector> sample_instances(std::span<const NegotiationInstance> instances, const Model& model,
                                            const SamplerConfig& sampler, const GuidanceConfig* guidance, int jobs,
                                            int ensemble) {
  const std::size_t n = instances.size();
  const auto members = static_cast<std::size_t>(std::max(ensemble, 1));
  std::vector<UtilityVector> out(n * members);
  parallel_for(n * members, jobs, [&](std::size_t idx) {
    const std::size_t k = idx / n;
    SamplerConfig sc = sampler;
    if (k > 0) sc.seed = derive_seed(derive_seed(sampler.seed, "ensemble"), static_cast<std::uint64_t>(k));
    out[idx] = sample(instances[idx % n], model, sc, guidance).u;
  });
  return out;
}

std::vector<UtilityVector> sample_mode(std::span<const NegotiationInstance> instances, const Model& model,
                                       const ExperimentConfig& cfg) {
  if (cfg.mode == Mode::supervised) throw ConfigError("sample_mode: supervised mode has no diffusion sampler");
  auto out = sample_instances(instances, model, cfg.sampler, cfg.inference_guidance(), cfg.jobs, cfg.ensemble);
  if (cfg.mode == Mode::projection) {
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = project_to_frontier(out[i], instances[i % instances.size()].radius);
  }
  return out;
}

std::string samples_csv(std::span<const NegotiationInstance> instances, std::span<const UtilityVector> samples) {
  std::ostringstream os;
  os.precision(17);
  os << "id,u1,u2,d1,d2,oracle_u1,oracle_u2,nash_product,oracle_nash_product\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& inst = instances[i];
    const Vec2 d = inst.disagreement();
    const UtilityVector star = solve_nbs({inst.radius, d});
    os << inst.id << ',' << samples[i].x << ',' << samples[i].y << ',' << d.x << ',' << d.y << ',' << star.x << ','
       << star.y << ',' << nash_product(samples[i], d) << ',' << nash_product(star, d) << '\n';
  }
  return os.str();
}

ExperimentResult run_experiment(ExperimentConfig cfg) {
  cfg.resolve();
  cfg.validate();
  const DatasetSplit data = load_or_generate(cfg);
  std::vector<NegotiationInstance> test = data.subset(Split::test);
  if (test.empty()) throw ConfigError("test split is empty");
  if (cfg.equalize_d) {
    for (auto& inst : test) {
      inst = equalize_disagreement(inst);
      inst.reference = solve_nbs({inst.radius, inst.disagreement()});
    }
  }

  ExperimentResult res;
  std::vector<LossLogRow> log;
  const bool write = !cfg.out_dir.empty();
  if (write) std::filesystem::create_directories(cfg.out_dir);

  if (cfg.mode == Mode::supervised) {
    SupervisedModel sm(cfg.architecture.encoder);
    if (!cfg.checkpoint.empty()) {
      if (!std::filesystem::exists(cfg.checkpoint)) throw ConfigError("checkpoint not found: " + cfg.checkpoint);
      auto params = sm.parameters();
      load_checkpoint(cfg.checkpoint, params);
    } else {
      sm.init(cfg.seed);
      log = train_supervised(data, sm, cfg.training);
      if (write) {
        auto params = sm.parameters();
        save_checkpoint(cfg.out_dir / "model.json", params, cfg.seed, json{{"kind", "supervised"}});
      }
    }
    res.samples.resize(test.size());
    parallel_for(test.size(), cfg.jobs, [&](std::size_t i) { res.samples[i] = sm.predict(test[i]); });
    res.instances = test;
  } else {
    const Model model = obtain_model(cfg, data, &log);
    if (write && cfg.checkpoint.empty()) model.save(cfg.out_dir / "model.json");
    res.samples = sample_mode(test, model, cfg);
    for (int k = 0; k < cfg.ensemble; ++k) res.instances.insert(res.instances.end(), test.begin(), test.end());
  }
  res.metrics = evaluate(res.samples, res.instances);

  if (write) {
    const json resolved = config_to_json(cfg);
    write_text(cfg.out_dir / "config.json", resolved.dump(2) + "\n");
    json metrics = json::parse(metrics_to_json(res.metrics));
    metrics["mode"] = to_string(cfg.mode);
    metrics["seed"] = cfg.seed;
    metrics["config"] = resolved;
    write_text(cfg.out_dir / "metrics.json", metrics.dump(2) + "\n");
    write_text(cfg.out_dir / "samples.csv", samples_csv(res.instances, res.samples));
    if (!log.empty()) write_text(cfg.out_dir / "loss_log.csv", loss_log_csv(log));
  }
  return res;
}

// ---- grid search -------------------------------------------------------------

std::size_t GridSearchSpec::cells() const {
  return lambda.size() * t_start.size() * alpha.size() * beta.size() * gamma.size() * steps.size();
}

std::vector<double> GridSearchSpec::linspace(double lo, double hi, int n) {
  if (n < 1) throw ConfigError("linspace needs n >= 1");
  if (n == 1) return {lo};
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / (n - 1.0);
  return out;
}

namespace {

void check_range(const std::vector<double>& xs, double lo, double hi, const char* name) {
  for (double x : xs)
    if (!(x >= lo - 1e-12 && x <= hi + 1e-12))
      throw ConfigError(std::string("grid value for ") + name + " outside [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]: " + std::to_string(x));
}

}  // namespace

void GridSearchSpec::validate() const {
  if (cells() == 0) throw ConfigError("grid search: empty grid");
  check_range(lambda, 0.005, 0.35, "lambda");
  check_range(t_start, 0.10, 0.70, "t_start");
  check_range(alpha, 5.0, 300.0, "alpha");
  check_range(beta, 0.5, 50.0, "beta");
  check_range(gamma, 0.5, 80.0, "gamma");
  for (int s : steps)
    if (s != 10 && s != 15 && s != 25 && s != 50)
      throw ConfigError("grid value for steps must be one of 10, 15, 25, 50: " + std::to_string(s));
}

double composite_objective(const MetricsReport& m) {
  return 0.40 * m.ir_compliance + 0.35 * m.nash_efficiency + 0.15 * m.mean_nash_product +
         0.10 * (1.0 - m.mean_frontier_distance);
}

std::vector<GridCell> rank_cells(std::vector<GridCell> cells) {
  for (auto& c : cells) c.composite = composite_objective(c.metrics);
  std::stable_sort(cells.begin(), cells.end(), [](const GridCell& a, const GridCell& b) {
    if (a.composite != b.composite) return a.composite > b.composite;
    return a.index < b.index;
  });
  return cells;
}

GridResult grid_search(const GridSearchSpec& spec, const Model& model, std::span<const NegotiationInstance> val,
                       const ExperimentConfig& base) {
  spec.validate();
  if (val.empty()) throw ConfigError("grid search: validation split is empty");
  GridResult res;
  for (double lam : spec.lambda)
    for (double ts : spec.t_start)
      for (double a : spec.alpha)
        for (double b : spec.beta)
          for (double g : spec.gamma)
            for (int s : spec.steps) {
              GridCell c;
              c.index = res.cells.size();
              c.guidance = base.guidance;
              c.guidance.lambda = lam;
              c.guidance.t_start = ts;
              c.guidance.alpha = a;
              c.guidance.beta = b;
              c.guidance.gamma = g;
              c.steps = s;
              res.cells.push_back(c);
            }
  parallel_for(res.cells.size(), base.jobs, [&](std::size_t i) {
    GridCell& c = res.cells[i];
    SamplerConfig sc = base.sampler;
    sc.steps = c.steps;
    const auto samples = sample_instances(val, model, sc, &c.guidance, 1, 1);
    c.metrics = evaluate(samples, val);
    c.composite = composite_objective(c.metrics);
  });
  res.ranked = rank_cells(res.cells);
  res.sensitivity = sensitivity(res.cells);
  return res;
}

std::vector<double> ranks(std::span<const double> xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  return pearson(rx, ry);
}

namespace {

std::array<double, kGridMetrics> metric_values(const MetricsReport& m) {
  return {m.ir_compliance, m.mean_nash_product, m.nash_efficiency, m.mean_frontier_distance};
}

double param_value(const GridCell& c, int p) {
  switch (p) {
    case 0: return c.guidance.lambda;
    case 1: return c.guidance.t_start;
    case 2: return c.guidance.alpha;
    case 3: return c.guidance.beta;
    case 4: return c.guidance.gamma;
    default: return static_cast<double>(c.steps);
  }
}

}  // namespace

std::vector<SensitivityRow> sensitivity(std::span<const GridCell> cells) {
  static const char* names[] = {"lambda", "t_start", "alpha", "beta", "gamma", "steps"};
  std::vector<SensitivityRow> out;
  for (int p = 0; p < 6; ++p) {
    SensitivityRow row;
    row.parameter = names[p];
    std::vector<double> xs;
    for (const auto& c : cells) xs.push_back(param_value(c, p));
    double score = 0.0;
    for (int k = 0; k < kGridMetrics; ++k) {
      std::vector<double> ys;
      std::map<double, std::pair<double, int>> groups;
      for (const auto& c : cells) {
        const double y = metric_values(c.metrics)[static_cast<std::size_t>(k)];
        ys.push_back(y);
        auto& g = groups[param_value(c, p)];
        g.first += y;
        ++g.second;
      }
      double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0.0;
      for (const auto& [v, g] : groups) {
        const double m = g.first / g.second;
        lo = std::min(lo, m);
        hi = std::max(hi, m);
        sum += m;
      }
      const double mean = sum / static_cast<double>(groups.size());
      score += (groups.size() > 1 && std::abs(mean) > 1e-15) ? (hi - lo) / std::abs(mean) : 0.0;
      row.spearman[static_cast<std::size_t>(k)] = spearman(xs, ys);
    }
    row.score = score / kGridMetrics;
    out.push_back(row);
  }
  return out;
}

std::string grid_csv(std::span<const GridCell> ranked) {
  std::ostringstream os;
  os.precision(10);
  os << "rank,cell,lambda,t_start,alpha,beta,gamma,steps,ir_compliance,nash_product,nash_efficiency,"
        "frontier_distance,composite\n";
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& c = ranked[r];
    os << r + 1 << ',' << c.index << ',' << c.guidance.lambda << ',' << c.guidance.t_start << ','
       << c.guidance.alpha << ',' << c.guidance.beta << ',' << c.guidance.gamma << ',' << c.steps << ','
       << c.metrics.ir_compliance << ',' << c.metrics.mean_nash_product << ',' << c.metrics.nash_efficiency << ','
       << c.metrics.mean_frontier_distance << ',' << c.composite << '\n';
  }
  return os.str();
}

std::string sensitivity_csv(std::span<const SensitivityRow> rows) {
  std::ostringstream os;
  os.precision(10);
  os << "parameter,score,rho_ir_compliance,rho_nash_product,rho_nash_efficiency,rho_frontier_distance\n";
  for (const auto& r : rows) {
    os << r.parameter << ',' << r.score;
    for (double s : r.spearman) os << ',' << s;
    os << '\n';
  }
  return os.str();
}

// ---- theory suite ------------------------------------------------------------

IrEntryStats ir_entry_property(const TheoryConfig& cfg, const GuidanceConfig& guidance) {
  Rng rng(derive_seed(cfg.seed, "ir-entry"));
  IrEntryStats st;
  st.starts = cfg.starts;
  for (int i = 0; i < cfg.starts; ++i) {
    const Vec2 d{rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)};
    UtilityVector u;
    do {
      u = {rng.uniform(-1.0, 1.2), rng.uniform(-1.0, 1.2)};
    } while (u.x >= d.x && u.y >= d.y);
    if (auto k = ir_entry_time(u, d, guidance, cfg.max_iters)) {
      ++st.entered;
      st.max_iters_used = std::max(st.max_iters_used, *k);
    }
  }
  return st;
}

TerminalReturnStats terminal_return_regression(const Model& model, std::span<const NegotiationInstance> instances,
                           const GuidanceConfig& guidance, const SamplerConfig& sampler) {
  TerminalReturnStats st;
  st.instances = static_cast<int>(instances.size());
  SamplerConfig fixed = sampler;
  fixed.terminal = TerminalReturn::clean_estimate;
  SamplerConfig legacy = sampler;
  legacy.terminal = TerminalReturn::ddim_output;
  int ir_f = 0, ir_l = 0;
  for (const auto& inst : instances) {
    const FeasibleSet fs{inst.radius, inst.disagreement()};
    const auto a = sample(inst, model, fixed, &guidance, true);
    const auto b = sample(inst, model, legacy, &guidance, false);
    if (a.u == a.trajectory.back().u0_post) ++st.terminal_matches;
    ir_f += fs.in_ir_region(a.u) ? 1 : 0;
    ir_l += fs.in_ir_region(b.u) ? 1 : 0;
  }
  if (st.instances > 0) {
    st.ir_fixed = static_cast<double>(ir_f) / st.instances;
    st.ir_legacy = static_cast<double>(ir_l) / st.instances;
  }
  return st;
}

DriftClampStats drift_clamp_regression(const Model& model, const SamplerConfig& sampler) {
  Model crafted = model;
  const double target = 2.0 * sampler.c_drift;
  for (double& b : crafted.denoiser.l3.bias.value.data()) b = target / crafted.denoiser.cfg.c_out;
  for (double& w : crafted.denoiser.l3.weight.value.data()) w = 0.0;

  NegotiationInstance inst;
  inst.id = 0;
  inst.agents[0] = {0.68, 0.5, 0.5};
  inst.agents[1] = {0.68, 0.5, 0.5};
  inst.radius = 1.0;
  GuidanceConfig g;
  g.lambda = 0.35;
  g.t_start = 1.0;
  const auto [h, cache] = encode(inst, crafted.encoder);

  auto max_latent = [&](bool clamp) {
    SamplerConfig sc = sampler;
    sc.drift_clamp = clamp;
    const auto r = sample_from(inst, h, {0.0, 0.0}, crafted, sc, &g, true);
    double m = 0.0;
    for (std::size_t i = 1; i < r.trajectory.size(); ++i)
      m = std::max({m, std::abs(r.trajectory[i].u_t.x), std::abs(r.trajectory[i].u_t.y)});
    return m;
  };
  return {max_latent(true), max_latent(false), sampler.c_drift};
}

std::vector<TheoryCheck> theory_suite(const TheoryConfig& cfg, const Model* model) {
  std::vector<TheoryCheck> out;
  {
    GuidanceConfig g;
    g.beta = cfg.beta;
    g.lambda = cfg.lambda;
    const auto st = ir_entry_property(cfg, g);
    std::ostringstream os;
    os << st.entered << "/" << st.starts << " starts entered IR within " << cfg.max_iters
       << " iterations (slowest " << st.max_iters_used << ")";
    out.push_back({"ir_entry", st.entered == st.starts, os.str()});
  }
  Model fresh;
  if (!model) {
    fresh.init(cfg.seed);
    model = &fresh;
  }
  {
    const auto data = generate_synthetic(static_cast<std::size_t>(std::max(cfg.regression_instances, 1)) * 10,
                                         cfg.seed, 1.0);
    std::vector<NegotiationInstance> insts(data.instances().begin(),
                                           data.instances().begin() + std::max(cfg.regression_instances, 1));
    SamplerConfig sc;
    sc.seed = cfg.seed;
    const auto st = terminal_return_regression(*model, insts, GuidanceConfig{}, sc);
    std::ostringstream os;
    os << st.terminal_matches << "/" << st.instances << " outputs equal the guided clean estimate; IR "
       << st.ir_fixed << " vs legacy " << st.ir_legacy;
    out.push_back({"terminal_clean_estimate", st.terminal_matches == st.instances && st.ir_fixed > st.ir_legacy,
                   os.str()});
  }
  {
    SamplerConfig sc;
    sc.seed = cfg.seed;
    const auto st = drift_clamp_regression(*model, sc);
    std::ostringstream os;
    os << "max |u_t| clamped " << st.max_latent_clamped << ", unclamped " << st.max_latent_unclamped
       << ", c_drift " << st.c_drift;
    out.push_back({"drift_clamp", st.max_latent_clamped <= st.c_drift && st.max_latent_unclamped > st.c_drift,
                   os.str()});
  }
  return out;
}

// ---- trajectories --------------------------------------------------------------

std::string trajectory_csv(const std::vector<TrajectoryStep>& steps) {
  std::ostringstream os;
  os.precision(17);
  os << "step,t,u_t1,u_t2,u0_pre1,u0_pre2,u0_post1,u0_post2,grad_norm,nash_product,frontier_distance,guided\n";
  for (const auto& s : steps)
    os << s.step << ',' << s.t << ',' << s.u_t.x << ',' << s.u_t.y << ',' << s.u0_pre.x << ',' << s.u0_pre.y << ','
       << s.u0_post.x << ',' << s.u0_post.y << ',' << s.grad_norm << ',' << s.nash << ',' << s.frontier_dist << ','
       << (s.guided ? 1 : 0) << '\n';
  return os.str();
}

std::vector<std::filesystem::path> export_trajectories(std::span<const NegotiationInstance> instances,
                                                       const Model& model, const ExperimentConfig& cfg,
                                                       std::size_t count, const std::filesystem::path& out_dir) {
  count = std::min(count, instances.size());
  if (count == 0) throw ConfigError("export_trajectories: no instances");
  std::vector<SampleResult> guided(count), unguided(count);
  parallel_for(count, cfg.jobs, [&](std::size_t i) {
    guided[i] = sample(instances[i], model, cfg.sampler, &cfg.guidance, true);
    unguided[i] = sample(instances[i], model, cfg.sampler, nullptr, true);
  });
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> paths;
  for (std::size_t i = 0; i < count; ++i) {
    const std::string id = std::to_string(instances[i].id);
    paths.push_back(out_dir / ("trajectory_" + id + "_guided.csv"));
    write_text(paths.back(), trajectory_csv(guided[i].trajectory));
    paths.push_back(out_dir / ("trajectory_" + id + "_unguided.csv"));
    write_text(paths.back(), trajectory_csv(unguided[i].trajectory));
  }

  const std::size_t S = guided[0].trajectory.size();
  auto stats = [&](const std::vector<SampleResult>& runs, std::size_t s, auto field) {
    double sum = 0.0;
    for (const auto& r : runs) sum += field(r.trajectory[s]);
    const double mean = sum / static_cast<double>(runs.size());
    double var = 0.0;
    for (const auto& r : runs) var += (field(r.trajectory[s]) - mean) * (field(r.trajectory[s]) - mean);
    const double sd = runs.size() > 1 ? std::sqrt(var / static_cast<double>(runs.size() - 1)) : 0.0;
    return std::pair{mean, sd};
  };
  auto nash = [](const TrajectoryStep& s) { return s.nash; };
  auto fd = [](const TrajectoryStep& s) { return s.frontier_dist; };
  auto gn = [](const TrajectoryStep& s) { return s.grad_norm; };
  std::ostringstream os;
  os.precision(17);
  os << "step,t,guided_nash_mean,guided_nash_std,guided_fdist_mean,guided_fdist_std,guided_grad_mean,"
        "guided_grad_std,unguided_nash_mean,unguided_nash_std,unguided_fdist_mean,unguided_fdist_std\n";
  for (std::size_t s = 0; s < S; ++s) {
    os << s << ',' << guided[0].trajectory[s].t;
    for (auto [m, sd] : {stats(guided, s, nash), stats(guided, s, fd), stats(guided, s, gn),
                         stats(unguided, s, nash), stats(unguided, s, fd)})
      os << ',' << m << ',' << sd;
    os << '\n';
  }
  paths.push_back(out_dir / "trajectory_aggregate.csv");
  write_text(paths.back(), os.str());
  return paths;
}

}  // namespace nashdiff
