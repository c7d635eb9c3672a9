#include "nashdiff/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "nashdiff/errors.hpp"

namespace nashdiff {

using nlohmann::json;

std::string to_string(Mode m) {
  switch (m) {
    case Mode::guided: return "guided";
    case Mode::unguided: return "unguided";
    case Mode::projection: return "projection";
    case Mode::hard_constraint: return "hard_constraint";
    case Mode::supervised: return "supervised";
  }
  return "guided";
}

Mode parse_mode(std::string_view name) {
  for (Mode m : {Mode::guided, Mode::unguided, Mode::projection, Mode::hard_constraint, Mode::supervised})
    if (to_string(m) == name) return m;
  throw ConfigError("unknown mode '" + std::string(name) +
                    "' (expected guided, unguided, projection, hard_constraint or supervised)");
}

namespace {

std::string terminal_name(TerminalReturn r) {
  return r == TerminalReturn::clean_estimate ? "clean_estimate" : "ddim_output";
}

TerminalReturn parse_terminal(std::string_view s) {
  if (s == "clean_estimate") return TerminalReturn::clean_estimate;
  if (s == "ddim_output") return TerminalReturn::ddim_output;
  throw ConfigError("unknown terminal return '" + std::string(s) + "' (expected clean_estimate or ddim_output)");
}

struct Field {
  const char* section;
  const char* key;
  const char* help;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

[[noreturn]] void type_error(const std::string& what) { throw ConfigError(what); }

double as_number(const json& v, const std::string& name) {
  if (!v.is_number()) type_error(name + ": expected a number");
  return v.get<double>();
}

long long as_integer(const json& v, const std::string& name) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) type_error(name + ": expected an integer");
  return v.get<long long>();
}

std::uint64_t as_unsigned(const json& v, const std::string& name) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<std::uint64_t>(v.get<long long>());
  type_error(name + ": expected a nonnegative integer");
}

bool as_bool(const json& v, const std::string& name) {
  if (!v.is_boolean()) type_error(name + ": expected true or false");
  return v.get<bool>();
}

std::string as_string(const json& v, const std::string& name) {
  if (!v.is_string()) type_error(name + ": expected a string");
  return v.get<std::string>();
}

#define NUM(sec, k, expr, help)                                                   \
  Field{sec, k, help, [](const ExperimentConfig& c) { return json(c.expr); },   \
        [](ExperimentConfig& c, const json& v) { c.expr = as_number(v, sec "." k); }}
#define INT(sec, k, expr, help)                                                              \
  Field{sec, k, help, [](const ExperimentConfig& c) { return json(c.expr); },              \
        [](ExperimentConfig& c, const json& v) {                                           \
          c.expr = static_cast<decltype(c.expr)>(as_integer(v, sec "." k));                 \
        }}
#define BOOL(sec, k, expr, help)                                                  \
  Field{sec, k, help, [](const ExperimentConfig& c) { return json(c.expr); },   \
        [](ExperimentConfig& c, const json& v) { c.expr = as_bool(v, sec "." k); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      INT("dataset", "count", dataset.count, "synthetic dyads to generate"),
      NUM("dataset", "radius", dataset.radius, "frontier radius r"),
      Field{"dataset", "path", "dataset file to load instead of generating",
            [](const ExperimentConfig& c) { return json(c.dataset.path); },
            [](ExperimentConfig& c, const json& v) { c.dataset.path = as_string(v, "dataset.path"); }},

      INT("architecture", "heads", architecture.encoder.heads, "attention heads M"),
      Field{"architecture", "embed_dim", "context embedding size d_h",
            [](const ExperimentConfig& c) { return json(c.architecture.encoder.embed_dim); },
            [](ExperimentConfig& c, const json& v) {
              const int d = static_cast<int>(as_integer(v, "architecture.embed_dim"));
              c.architecture.encoder.embed_dim = d;
              c.architecture.denoiser.embed_dim = d;
            }},
      INT("architecture", "time_dim", architecture.denoiser.time_dim, "time embedding size"),
      INT("architecture", "hidden", architecture.denoiser.hidden, "denoiser hidden width"),
      NUM("architecture", "c_out", architecture.denoiser.c_out, "denoiser output scale"),
      INT("architecture", "T", architecture.T, "diffusion timesteps"),
      NUM("architecture", "beta_first", architecture.beta_first, "linear schedule start"),
      NUM("architecture", "beta_last", architecture.beta_last, "linear schedule end"),

      INT("training", "epochs", training.epochs, "total epochs"),
      INT("training", "phase1_epochs", training.phase1_epochs, "denoising-only epochs before guidance loss"),
      INT("training", "batch_size", training.batch_size, "minibatch size"),
      NUM("training", "lr", training.optimizer.lr, "AdamW peak learning rate"),
      NUM("training", "beta1", training.optimizer.beta1, "AdamW first-moment decay"),
      NUM("training", "beta2", training.optimizer.beta2, "AdamW second-moment decay"),
      NUM("training", "adam_eps", training.optimizer.eps, "AdamW denominator epsilon"),
      NUM("training", "weight_decay", training.optimizer.weight_decay, "AdamW decoupled weight decay"),
      NUM("training", "beta_start", training.beta_start, "IR weight at the first phase-2 epoch"),
      NUM("training", "beta_end", training.beta_end, "IR weight at the last epoch"),
      NUM("training", "c_max", training.c_max, "clean-estimate clip in the phase-2 loss"),

      INT("sampler", "steps", sampler.steps, "DDIM steps S"),
      NUM("sampler", "c_max", sampler.c_max, "clean-estimate clip"),
      NUM("sampler", "c_drift", sampler.c_drift, "latent drift clamp"),
      BOOL("sampler", "drift_clamp", sampler.drift_clamp, "apply the drift clamp"),
      Field{"sampler", "grid", "timestep grid: strided (T - i*T/S) or inclusive (T down to 1)",
            [](const ExperimentConfig& c) { return json(to_string(c.sampler.grid)); },
            [](ExperimentConfig& c, const json& v) {
              c.sampler.grid = parse_timestep_grid(as_string(v, "sampler.grid"));
            }},
      Field{"sampler", "terminal", "last-step return: clean_estimate or ddim_output (legacy)",
            [](const ExperimentConfig& c) { return json(terminal_name(c.sampler.terminal)); },
            [](ExperimentConfig& c, const json& v) {
              c.sampler.terminal = parse_terminal(as_string(v, "sampler.terminal"));
            }},

      NUM("guidance", "lambda", guidance.lambda, "guidance step size"),
      NUM("guidance", "t_start", guidance.t_start, "guide when t/T < t_start"),
      NUM("guidance", "alpha", guidance.alpha, "Nash multiplier"),
      NUM("guidance", "beta", guidance.beta, "IR penalty"),
      NUM("guidance", "gamma", guidance.gamma, "frontier penalty"),
      NUM("guidance", "delta", guidance.delta, "IR margin"),
      NUM("guidance", "eps", guidance.eps, "log and normalisation epsilon"),

      Field{"experiment", "mode", "guided, unguided, projection, hard_constraint or supervised",
            [](const ExperimentConfig& c) { return json(to_string(c.mode)); },
            [](ExperimentConfig& c, const json& v) { c.mode = parse_mode(as_string(v, "experiment.mode")); }},
      Field{"experiment", "seed", "root seed for data, init, shuffling and noise",
            [](const ExperimentConfig& c) { return json(c.seed); },
            [](ExperimentConfig& c, const json& v) { c.seed = as_unsigned(v, "experiment.seed"); }},
      Field{"experiment", "checkpoint", "model checkpoint to load instead of training",
            [](const ExperimentConfig& c) { return json(c.checkpoint); },
            [](ExperimentConfig& c, const json& v) { c.checkpoint = as_string(v, "experiment.checkpoint"); }},
      INT("experiment", "jobs", jobs, "worker threads"),
      INT("experiment", "ensemble", ensemble, "samples per test instance"),
      BOOL("experiment", "equalize_d", equalize_d, "replace both disagreement points by their mean"),

      Field{"output", "dir", "output directory",
            [](const ExperimentConfig& c) { return json(c.out_dir.string()); },
            [](ExperimentConfig& c, const json& v) { c.out_dir = as_string(v, "output.dir"); }},
  };
  return table;
}

#undef NUM
#undef INT
#undef BOOL

}  // namespace

void ExperimentConfig::resolve() {
  training.seed = seed;
  sampler.seed = seed;
  guidance.radius = dataset.radius;
  training.guidance.radius = dataset.radius;
  training.guidance.alpha = guidance.alpha;
  training.guidance.gamma = guidance.gamma;
  training.guidance.delta = guidance.delta;
  training.guidance.eps = guidance.eps;
  if (mode == Mode::hard_constraint) guidance.t_start = 1.0;
}

void ExperimentConfig::validate() const {
  if (dataset.path.empty() && dataset.count < 1) throw ConfigError("dataset.count must be >= 1");
  if (!(dataset.radius > 0.0)) throw ConfigError("dataset.radius must be > 0");
  if (architecture.encoder.heads < 1) throw ConfigError("architecture.heads must be >= 1");
  if (architecture.encoder.embed_dim < 1) throw ConfigError("architecture.embed_dim must be >= 1");
  if (architecture.denoiser.time_dim < 2 || architecture.denoiser.time_dim % 2 != 0)
    throw ConfigError("architecture.time_dim must be a positive even integer");
  if (architecture.denoiser.hidden < 1) throw ConfigError("architecture.hidden must be >= 1");
  if (!(architecture.denoiser.c_out > 0.0)) throw ConfigError("architecture.c_out must be > 0");
  if (architecture.T < 1) throw ConfigError("architecture.T must be >= 1");
  if (!(architecture.beta_first > 0.0 && architecture.beta_first <= architecture.beta_last &&
        architecture.beta_last < 1.0))
    throw ConfigError("architecture.beta_first/beta_last must satisfy 0 < first <= last < 1");
  training.validate();
  sampler.validate();
  if (sampler.steps > architecture.T) throw ConfigError("sampler.steps must not exceed architecture.T");
  guidance.validate();
  if (mode == Mode::hard_constraint && guidance.t_start < 1.0)
    throw ConfigError("hard_constraint mode requires guidance.t_start = 1");
  if (jobs < 1) throw ConfigError("experiment.jobs must be >= 1");
  if (ensemble < 1) throw ConfigError("experiment.ensemble must be >= 1");
}

Model ExperimentConfig::make_model() const {
  return Model(architecture.encoder, architecture.denoiser,
               NoiseSchedule(architecture.T, architecture.beta_first, architecture.beta_last));
}

const GuidanceConfig* ExperimentConfig::inference_guidance() const {
  return mode == Mode::guided || mode == Mode::hard_constraint ? &guidance : nullptr;
}

std::vector<ConfigKey> config_keys() {
  const ExperimentConfig defaults;
  std::vector<ConfigKey> out;
  for (const auto& f : fields()) out.push_back({f.section, f.key, f.get(defaults).dump(), f.help});
  return out;
}

std::string config_help() {
  std::ostringstream os;
  os << "Config keys (JSON sections; defaults in brackets):\n";
  std::string section;
  for (const auto& k : config_keys()) {
    if (k.section != section) {
      section = k.section;
      os << "  " << section << "\n";
    }
    std::string name = "    " + k.key + " [" + k.default_value + "]";
    if (name.size() < 34) name.resize(34, ' ');
    os << name << "  " << k.help << "\n";
  }
  return os.str();
}

json config_to_json(const ExperimentConfig& cfg) {
  json out = json::object();
  for (const auto& f : fields()) out[f.section][f.key] = f.get(cfg);
  return out;
}

void apply_config_json(ExperimentConfig& cfg, const json& doc, const std::string& origin) {
  if (!doc.is_object()) throw ConfigError(origin + ": top level must be an object");
  std::map<std::string, std::map<std::string, const Field*>> index;
  for (const auto& f : fields()) index[f.section][f.key] = &f;
  for (const auto& [section, body] : doc.items()) {
    auto s = index.find(section);
    if (s == index.end()) throw ConfigError(origin + ": unknown section '" + section + "'");
    if (!body.is_object()) throw ConfigError(origin + ": section '" + section + "' must be an object");
    for (const auto& [key, value] : body.items()) {
      auto k = s->second.find(key);
      if (k == s->second.end()) throw ConfigError(origin + ": unknown key '" + section + "." + key + "'");
      try {
        k->second->set(cfg, value);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ": " + e.what());
      }
    }
  }
}

ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    const std::size_t upto = std::min<std::size_t>(e.byte > 0 ? e.byte - 1 : 0, text.size());
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::string msg = e.what();
    if (auto p = msg.find("syntax error"); p != std::string::npos) msg = msg.substr(p);
    throw ConfigError(path.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + msg);
  }
  apply_config_json(base, doc, path.string());
  return base;
}

}  // namespace nashdiff
