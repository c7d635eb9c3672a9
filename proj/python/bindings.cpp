#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "nashdiff/checkpoint.hpp"
#include "nashdiff/config.hpp"
#include "nashdiff/diffusion.hpp"
#include "nashdiff/domain.hpp"
#include "nashdiff/errors.hpp"
#include "nashdiff/guidance.hpp"
#include "nashdiff/harness.hpp"
#include "nashdiff/oracle.hpp"

namespace py = pybind11;
using namespace nashdiff;

namespace {

using Pair = std::pair<double, double>;

Vec2 vec(Pair p) { return {p.first, p.second}; }
Pair pair(Vec2 v) { return {v.x, v.y}; }

GuidanceConfig guidance_from(double lambda, double t_start, double alpha, double beta, double gamma, double delta,
                             double eps, double radius) {
  GuidanceConfig g;
  g.lambda = lambda;
  g.t_start = t_start;
  g.alpha = alpha;
  g.beta = beta;
  g.gamma = gamma;
  g.delta = delta;
  g.eps = eps;
  g.radius = radius;
  g.validate();
  return g;
}

ExperimentConfig config_from(const std::string& json_text) {
  ExperimentConfig cfg;
  cfg.out_dir.clear();
  if (!json_text.empty()) apply_config_json(cfg, nlohmann::json::parse(json_text), "config");
  return cfg;
}

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["ir_compliance"] = m.ir_compliance;
  d["mean_nash_product"] = m.mean_nash_product;
  d["mean_oracle_nash_product"] = m.mean_oracle_nash_product;
  d["nash_efficiency"] = m.nash_efficiency;
  d["mean_frontier_distance"] = m.mean_frontier_distance;
  d["n_samples"] = m.n_samples;
  d["nash_products"] = m.nash_products;
  d["oracle_nash_products"] = m.oracle_nash_products;
  return d;
}

py::dict instance_dict(const NegotiationInstance& inst) {
  py::dict d;
  d["id"] = inst.id;
  d["split"] = to_string(inst.split);
  d["radius"] = inst.radius;
  py::list agents;
  for (const auto& a : inst.agents) {
    py::dict ad;
    ad["disagreement"] = a.disagreement;
    ad["budget"] = a.budget;
    ad["priority"] = a.priority;
    agents.append(ad);
  }
  d["agents"] = agents;
  if (inst.reference) d["reference"] = pair(*inst.reference);
  return d;
}

}  // namespace

PYBIND11_MODULE(_nashdiff, m) {
  m.doc() = "Guided graph-diffusion generator for bilateral Nash bargaining solutions";
  m.attr("__version__") = NASHDIFF_VERSION;
  m.attr("checkpoint_format") = kCheckpointFormat;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<InfeasibleInstance>(m, "InfeasibleInstance", PyExc_ValueError);
  py::register_exception<DegenerateInput>(m, "DegenerateInput", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("solve_nbs", [](Pair d, double radius) { return pair(solve_nbs({radius, vec(d)})); }, py::arg("d"),
        py::arg("radius") = 1.0);
  m.def("nash_product", [](Pair u, Pair d) { return nash_product(vec(u), vec(d)); }, py::arg("u"), py::arg("d"));
  m.def("project_feasible", [](Pair u, double r) { return pair(project_feasible(vec(u), r)); }, py::arg("u"),
        py::arg("radius") = 1.0);
  m.def("project_to_frontier", [](Pair u, double r) { return pair(project_to_frontier(vec(u), r)); }, py::arg("u"),
        py::arg("radius") = 1.0);
  m.def("frontier_distance", [](Pair u, double r) { return frontier_distance(vec(u), r); }, py::arg("u"),
        py::arg("radius") = 1.0);

  m.def(
      "guide_loss",
      [](Pair u, Pair d, double lambda, double t_start, double alpha, double beta, double gamma, double delta,
         double eps, double radius) {
        return guide_loss(vec(u), vec(d), guidance_from(lambda, t_start, alpha, beta, gamma, delta, eps, radius));
      },
      py::arg("u"), py::arg("d"), py::kw_only(), py::arg("lambda_") = 0.35, py::arg("t_start") = 0.25,
      py::arg("alpha") = 10.0, py::arg("beta") = 8.0, py::arg("gamma") = 15.0, py::arg("delta") = 0.05,
      py::arg("eps") = 1e-6, py::arg("radius") = 1.0);
  m.def(
      "guide_grad",
      [](Pair u, Pair d, double lambda, double t_start, double alpha, double beta, double gamma, double delta,
         double eps, double radius) {
        return pair(
            guide_grad(vec(u), vec(d), guidance_from(lambda, t_start, alpha, beta, gamma, delta, eps, radius)));
      },
      py::arg("u"), py::arg("d"), py::kw_only(), py::arg("lambda_") = 0.35, py::arg("t_start") = 0.25,
      py::arg("alpha") = 10.0, py::arg("beta") = 8.0, py::arg("gamma") = 15.0, py::arg("delta") = 0.05,
      py::arg("eps") = 1e-6, py::arg("radius") = 1.0);

  m.def(
      "wilcoxon",
      [](const std::vector<double>& x, const std::vector<double>& y) {
        const auto r = wilcoxon_signed_rank(x, y);
        py::dict d;
        d["statistic"] = r.statistic;
        d["p_value"] = r.p_value;
        d["n"] = r.n;
        d["exact"] = r.exact;
        return d;
      },
      py::arg("x"), py::arg("y"));

  m.def(
      "generate_dataset",
      [](std::size_t count, std::uint64_t seed, double radius) {
        py::list out;
        for (const auto& inst : generate_synthetic(count, seed, radius).instances()) out.append(instance_dict(inst));
        return out;
      },
      py::arg("count"), py::arg("seed") = 42, py::arg("radius") = 1.0);

  m.def("ddim_timesteps",
        [](int T, int S, const std::string& grid) { return ddim_timesteps(T, S, parse_timestep_grid(grid)); },
        py::arg("T") = 1000, py::arg("steps") = 15, py::arg("grid") = "strided");

  m.def(
      "resolve_config", [](const std::string& text) {
        auto cfg = config_from(text);
        cfg.resolve();
        cfg.validate();
        return config_to_json(cfg).dump();
      },
      py::arg("config_json") = "");

  m.def("config_keys", [] {
    py::list out;
    for (const auto& k : config_keys()) out.append(py::make_tuple(k.section, k.key, k.default_value, k.help));
    return out;
  });

  m.def(
      "run_experiment",
      [](const std::string& text) {
        const auto cfg = config_from(text);
        ExperimentResult res;
        {
          py::gil_scoped_release release;
          res = run_experiment(cfg);
        }
        py::dict d = metrics_dict(res.metrics);
        py::list samples;
        for (const auto& u : res.samples) samples.append(pair(u));
        d["samples"] = samples;
        py::list ids;
        for (const auto& inst : res.instances) ids.append(inst.id);
        d["instance_ids"] = ids;
        return d;
      },
      py::arg("config_json") = "");

  m.def(
      "theory_suite",
      [](int starts, int max_iters, double beta, double lambda, int regression_instances, std::uint64_t seed) {
        TheoryConfig tc;
        tc.starts = starts;
        tc.max_iters = max_iters;
        tc.beta = beta;
        tc.lambda = lambda;
        tc.regression_instances = regression_instances;
        tc.seed = seed;
        std::vector<TheoryCheck> checks;
        {
          py::gil_scoped_release release;
          checks = theory_suite(tc);
        }
        py::list out;
        for (const auto& c : checks) {
          py::dict d;
          d["name"] = c.name;
          d["passed"] = c.passed;
          d["detail"] = c.detail;
          out.append(d);
        }
        return out;
      },
      py::arg("starts") = 1000, py::arg("max_iters") = 500, py::arg("beta") = 50.0, py::arg("lambda_") = 0.35,
      py::arg("regression_instances") = 50, py::arg("seed") = 42);
}
