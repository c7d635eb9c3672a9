#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nashdiff/diffusion.hpp"
#include "nashdiff/encoder.hpp"
#include "nashdiff/guidance.hpp"

namespace nashdiff {

enum class Mode { guided, unguided, projection, hard_constraint, supervised };

std::string to_string(Mode m);
Mode parse_mode(std::string_view name);

struct DatasetSpec {
  std::size_t count = 2000;
  double radius = 1.0;
  std::string path;  // load from file instead of generating when set
};

struct ArchitectureSpec {
  EncoderConfig encoder;
  DenoiserConfig denoiser;
  int T = 1000;
  double beta_first = 1e-4;
  double beta_last = 0.02;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ArchitectureSpec architecture;
  TrainConfig training;
  SamplerConfig sampler;
  GuidanceConfig guidance;
  Mode mode = Mode::guided;
  std::uint64_t seed = 42;
  std::string checkpoint;  // load instead of training when set
  int jobs = 1;
  int ensemble = 1;        // samples per test instance
  bool equalize_d = false;
  std::filesystem::path out_dir = "out";

  // Pushes the root seed and radius into the nested configs and applies the
  // mode constraints (hard_constraint forces t_start = 1).
  void resolve();
  void validate() const;

  Model make_model() const;
  // Guidance used at inference for the configured mode; nullptr for modes
  // that sample without guidance.
  const GuidanceConfig* inference_guidance() const;
};

struct ConfigKey {
  std::string section;
  std::string key;
  std::string default_value;
  std::string help;
};

// Every recognised key with its built-in default.
std::vector<ConfigKey> config_keys();
std::string config_help();

nlohmann::json config_to_json(const ExperimentConfig& cfg);
// Overlays `doc` onto `cfg`. Unknown sections or keys and type mismatches
// throw ConfigError naming the offending key; `origin` prefixes messages.
void apply_config_json(ExperimentConfig& cfg, const nlohmann::json& doc, const std::string& origin = "config");
// Parse errors report "<path>:<line>:<column>: ...".
ExperimentConfig load_config_file(const std::filesystem::path& path, ExperimentConfig base = {});

}  // namespace nashdiff
