#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nashdiff/checkpoint.hpp"
#include "nashdiff/config.hpp"
#include "nashdiff/errors.hpp"
#include "nashdiff/harness.hpp"

#ifndef NASHDIFF_VERSION
#define NASHDIFF_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace nashdiff;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> jobs;
  std::optional<std::string> checkpoint;
  std::optional<std::string> data;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON config file (sections listed below)");
  sub->add_option("--seed", c.seed, "root seed");
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--jobs", c.jobs, "worker threads")->check(CLI::PositiveNumber);
  sub->add_option("--set", c.overrides, "override a config key, e.g. --set guidance.lambda=0.2")
      ->type_name("SECTION.KEY=VALUE");
}

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

ExperimentConfig resolve_config(const Common& c) {
  ExperimentConfig cfg;
  if (!c.config.empty()) cfg = load_config_file(c.config, cfg);
  for (const auto& o : c.overrides) {
    const auto eq = o.find('=');
    const auto dot = o.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("--set expects SECTION.KEY=VALUE, got '" + o + "'");
    json doc;
    doc[o.substr(0, dot)][o.substr(dot + 1, eq - dot - 1)] = parse_override_value(o.substr(eq + 1));
    apply_config_json(cfg, doc, "--set");
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.out) cfg.out_dir = *c.out;
  if (c.jobs) cfg.jobs = *c.jobs;
  if (c.checkpoint) cfg.checkpoint = *c.checkpoint;
  if (c.data) cfg.dataset.path = *c.data;
  return cfg;
}

// True when the config file or a --set names section.key explicitly.
bool sets_key(const Common& c, const std::string& section, const std::string& key) {
  for (const auto& o : c.overrides)
    if (o.rfind(section + "." + key + "=", 0) == 0) return true;
  if (c.config.empty()) return false;
  std::ifstream in(c.config);
  const json doc = json::parse(in, nullptr, false);
  return doc.is_object() && doc.contains(section) && doc[section].is_object() && doc[section].contains(key);
}

void finish(ExperimentConfig& cfg) {
  cfg.resolve();
  cfg.validate();
}

void echo_config(const ExperimentConfig& cfg) {
  write_text(cfg.out_dir / "config.json", config_to_json(cfg).dump(2) + "\n");
}

void print_metrics(const std::string& label, const MetricsReport& m) {
  std::cout << metrics_table({{label, m}});
}

int cmd_gen_data(const Common& c, std::optional<std::size_t> count, std::optional<double> radius) {
  ExperimentConfig cfg = resolve_config(c);
  if (count) cfg.dataset.count = *count;
  if (radius) cfg.dataset.radius = *radius;
  cfg.dataset.path.clear();
  finish(cfg);
  const auto data = generate_synthetic(cfg.dataset.count, cfg.seed, cfg.dataset.radius);
  const fs::path path = cfg.out_dir / "dataset.jsonl";
  fs::create_directories(cfg.out_dir);
  write_dataset(path, data);
  echo_config(cfg);
  const auto n = data.counts();
  std::cout << "wrote " << path.string() << " (train " << n.train << ", val " << n.val << ", test " << n.test
            << ")\n";
  return 0;
}

int cmd_train(const Common& c, std::optional<int> epochs) {
  ExperimentConfig cfg = resolve_config(c);
  if (epochs) {
    cfg.training.epochs = *epochs;
    // Keep the default even split between the two phases.
    if (!sets_key(c, "training", "phase1_epochs")) cfg.training.phase1_epochs = *epochs / 2;
  }
  cfg.checkpoint.clear();
  finish(cfg);
  const auto data = load_or_generate(cfg);
  fs::create_directories(cfg.out_dir);
  echo_config(cfg);
  Model model = cfg.make_model();
  model.init(cfg.seed);
  const auto log = train(data, model, cfg.training, [](const LossLogRow& r) {
    std::fprintf(stderr, "epoch %2d phase %d mse %.6f guide %.6f beta %.2f lr %.3g\n", r.epoch, r.phase, r.mse,
                 r.guide, r.beta, r.lr);
  });
  model.save(cfg.out_dir / "model.json");
  write_text(cfg.out_dir / "loss_log.csv", loss_log_csv(log));
  std::cout << "wrote " << (cfg.out_dir / "model.json").string() << "\n";
  return 0;
}

int cmd_sample(const Common& c, const std::optional<std::string>& mode, bool equalize) {
  ExperimentConfig cfg = resolve_config(c);
  if (mode) cfg.mode = parse_mode(*mode);
  if (equalize) cfg.equalize_d = true;
  finish(cfg);
  const auto res = run_experiment(cfg);
  print_metrics(to_string(cfg.mode), res.metrics);
  std::cout << "wrote " << (cfg.out_dir / "samples.csv").string() << "\n";
  return 0;
}

int cmd_evaluate(const Common& c, const std::vector<std::string>& modes) {
  ExperimentConfig base = resolve_config(c);
  std::vector<Mode> list;
  for (const auto& m : modes) list.push_back(parse_mode(m));
  if (list.empty()) list.push_back(base.mode);
  if (list.size() == 1) {
    base.mode = list[0];
    finish(base);
    const auto res = run_experiment(base);
    print_metrics(to_string(base.mode), res.metrics);
    return 0;
  }
  // Several modes share one model: train once (or load) and evaluate each in a subdirectory.
  finish(base);
  const auto data = load_or_generate(base);
  if (base.checkpoint.empty()) {
    const Model model = obtain_model(base, data);
    fs::create_directories(base.out_dir);
    model.save(base.out_dir / "model.json");
    base.checkpoint = (base.out_dir / "model.json").string();
  }
  std::vector<std::pair<std::string, MetricsReport>> rows;
  std::optional<MetricsReport> guided, unguided;
  for (Mode m : list) {
    ExperimentConfig cfg = base;
    cfg.mode = m;
    cfg.out_dir = base.out_dir / to_string(m);
    if (m == Mode::hard_constraint) cfg.guidance.t_start = 1.0;
    finish(cfg);
    const auto res = run_experiment(cfg);
    rows.emplace_back(to_string(m), res.metrics);
    if (m == Mode::guided) guided = res.metrics;
    if (m == Mode::unguided) unguided = res.metrics;
  }
  std::cout << metrics_table(rows);
  if (guided && unguided) {
    const auto w = wilcoxon_signed_rank(guided->nash_products, unguided->nash_products);
    const json doc{{"statistic", w.statistic}, {"p_value", w.p_value}, {"n", w.n}, {"exact", w.exact}};
    write_text(base.out_dir / "wilcoxon.json", doc.dump(2) + "\n");
    std::cout << "wilcoxon guided vs unguided: W+ = " << w.statistic << ", n = " << w.n << ", p = " << w.p_value
              << "\n";
  }
  return 0;
}

int cmd_grid(const Common& c, GridSearchSpec spec, bool have_lambda, bool have_t, bool have_a, bool have_b,
             bool have_g, bool have_s) {
  ExperimentConfig cfg = resolve_config(c);
  finish(cfg);
  if (!have_lambda) spec.lambda = {cfg.guidance.lambda};
  if (!have_t) spec.t_start = {cfg.guidance.t_start};
  if (!have_a) spec.alpha = {cfg.guidance.alpha};
  if (!have_b) spec.beta = {cfg.guidance.beta};
  if (!have_g) spec.gamma = {cfg.guidance.gamma};
  if (!have_s) spec.steps = {cfg.sampler.steps};
  spec.validate();
  const auto data = load_or_generate(cfg);
  const Model model = obtain_model(cfg, data);
  const auto val = data.subset(Split::val);
  const auto res = grid_search(spec, model, val, cfg);
  fs::create_directories(cfg.out_dir);
  echo_config(cfg);
  if (cfg.checkpoint.empty()) model.save(cfg.out_dir / "model.json");
  write_text(cfg.out_dir / "grid.csv", grid_csv(res.ranked));
  write_text(cfg.out_dir / "sensitivity.csv", sensitivity_csv(res.sensitivity));
  const auto& best = res.ranked.front();
  std::cout << "cells " << res.cells.size() << "; best lambda " << best.guidance.lambda << ", t_start "
            << best.guidance.t_start << ", alpha " << best.guidance.alpha << ", beta " << best.guidance.beta
            << ", gamma " << best.guidance.gamma << ", steps " << best.steps << " (composite " << best.composite
            << ")\n";
  return 0;
}

int cmd_trace(const Common& c, std::size_t count) {
  ExperimentConfig cfg = resolve_config(c);
  finish(cfg);
  const auto data = load_or_generate(cfg);
  const Model model = obtain_model(cfg, data);
  const auto test = data.subset(Split::test);
  const auto paths = export_trajectories(test, model, cfg, count, cfg.out_dir);
  echo_config(cfg);
  std::cout << "wrote " << paths.size() << " trajectory files to " << cfg.out_dir.string() << "\n";
  return 0;
}

int cmd_theory(const Common& c, TheoryConfig tc) {
  ExperimentConfig cfg = resolve_config(c);
  finish(cfg);
  tc.seed = cfg.seed;
  std::optional<Model> model;
  if (!cfg.checkpoint.empty()) {
    model.emplace(cfg.make_model());
    model->load(cfg.checkpoint);
  }
  const auto checks = theory_suite(tc, model ? &*model : nullptr);
  bool ok = true;
  json doc = json::array();
  for (const auto& ch : checks) {
    std::cout << (ch.passed ? "PASS " : "FAIL ") << ch.name << ": " << ch.detail << "\n";
    doc.push_back({{"name", ch.name}, {"passed", ch.passed}, {"detail", ch.detail}});
    ok = ok && ch.passed;
  }
  if (c.out) write_text(cfg.out_dir / "theory.json", doc.dump(2) + "\n");
  return ok ? 0 : 1;
}

std::string one_line(std::string s) {
  for (char& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Nash bargaining generator: guided graph diffusion experiments"};
  app.require_subcommand(1);
  app.footer(config_help());

  Common c_gen, c_train, c_sample, c_eval, c_grid, c_trace, c_theory;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dyad dataset");
  add_common(gen, c_gen);
  std::optional<std::size_t> count;
  std::optional<double> radius;
  gen->add_option("--count", count, "number of dyads");
  gen->add_option("--radius", radius, "frontier radius");

  auto* tr = app.add_subcommand("train", "two-phase training; writes model.json and loss_log.csv");
  add_common(tr, c_train);
  std::optional<int> epochs;
  tr->add_option("--data", c_train.data, "dataset file (generated when omitted)");
  tr->add_option("--epochs", epochs, "training epochs");

  auto* sm = app.add_subcommand("sample", "sample the test split; writes samples.csv and metrics.json");
  add_common(sm, c_sample);
  std::optional<std::string> sample_mode_name;
  bool equalize = false;
  sm->add_option("--checkpoint", c_sample.checkpoint, "trained model (trains when omitted)");
  sm->add_option("--data", c_sample.data, "dataset file");
  sm->add_option("--mode", sample_mode_name, "guided, unguided, projection, hard_constraint, supervised");
  sm->add_flag("--counterfactual-equalize-d", equalize, "set both disagreement points to their mean");

  auto* ev = app.add_subcommand("evaluate", "evaluate one or more modes on the test split");
  add_common(ev, c_eval);
  std::vector<std::string> eval_modes;
  ev->add_option("--checkpoint", c_eval.checkpoint, "trained model (trains when omitted)");
  ev->add_option("--data", c_eval.data, "dataset file");
  ev->add_option("--mode", eval_modes, "mode(s); several modes share one model and add a Wilcoxon test")
      ->delimiter(',');

  auto* gr = app.add_subcommand("grid", "inference-time grid search on the validation split");
  add_common(gr, c_grid);
  GridSearchSpec spec;
  gr->add_option("--checkpoint", c_grid.checkpoint, "trained model (trains when omitted)");
  gr->add_option("--data", c_grid.data, "dataset file");
  auto* o_l = gr->add_option("--lambda", spec.lambda, "lambda values")->delimiter(',');
  auto* o_t = gr->add_option("--t-start", spec.t_start, "t_start values")->delimiter(',');
  auto* o_a = gr->add_option("--alpha", spec.alpha, "alpha values")->delimiter(',');
  auto* o_b = gr->add_option("--beta", spec.beta, "beta values")->delimiter(',');
  auto* o_g = gr->add_option("--gamma", spec.gamma, "gamma values")->delimiter(',');
  auto* o_s = gr->add_option("--steps", spec.steps, "DDIM step counts")->delimiter(',');

  auto* tc = app.add_subcommand("trace", "export guided and unguided trajectories");
  add_common(tc, c_trace);
  std::size_t trace_count = 30;
  tc->add_option("--checkpoint", c_trace.checkpoint, "trained model (trains when omitted)");
  tc->add_option("--data", c_trace.data, "dataset file");
  tc->add_option("--count", trace_count, "test instances to trace")->capture_default_str();

  auto* th = app.add_subcommand("theory", "IR entry, terminal-return and drift-clamp checks");
  add_common(th, c_theory);
  TheoryConfig theory_cfg;
  th->add_option("--checkpoint", c_theory.checkpoint, "model for the sampler checks (fresh init when omitted)");
  th->add_option("--starts", theory_cfg.starts, "infeasible starts")->capture_default_str();
  th->add_option("--max-iters", theory_cfg.max_iters, "guided iterations allowed")->capture_default_str();
  th->add_option("--ir-beta", theory_cfg.beta, "IR weight for the entry check")->capture_default_str();
  th->add_option("--step", theory_cfg.lambda, "step size for the entry check")->capture_default_str();

  auto* ver = app.add_subcommand("version", "print version and checkpoint format");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << "\n";
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(c_gen, count, radius);
    if (tr->parsed()) return cmd_train(c_train, epochs);
    if (sm->parsed()) return cmd_sample(c_sample, sample_mode_name, equalize);
    if (ev->parsed()) return cmd_evaluate(c_eval, eval_modes);
    if (gr->parsed())
      return cmd_grid(c_grid, spec, o_l->count() > 0, o_t->count() > 0, o_a->count() > 0, o_b->count() > 0,
                      o_g->count() > 0, o_s->count() > 0);
    if (tc->parsed()) return cmd_trace(c_trace, trace_count);
    if (th->parsed()) return cmd_theory(c_theory, theory_cfg);
    if (ver->parsed()) {
      std::cout << "nashdiff " << NASHDIFF_VERSION << " " << kCheckpointFormat << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 0;
}
