#include "nashdiff/domain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "nashdiff/errors.hpp"
#include "nashdiff/oracle.hpp"
#include "nashdiff/rng.hpp"

namespace nashdiff {

using nlohmann::json;

namespace {

bool in_unit(double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; }

// Seeded Fisher-Yates, then contiguous 80/10/10 slicing.
std::vector<NegotiationInstance> assign_splits(std::vector<NegotiationInstance> items,
                                               std::uint64_t seed) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, "split"));
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  const SplitCounts c = split_counts_for(items.size());
  std::vector<NegotiationInstance> out;
  out.reserve(items.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    NegotiationInstance inst = items[order[k]];
    inst.split = k < c.train ? Split::train : (k < c.train + c.val ? Split::val : Split::test);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace

void AgentFeatures::validate() const {
  if (!std::isfinite(disagreement) || disagreement < 0.0 || disagreement >= 1.0)
    throw ValidationError("disagreement must lie in [0,1)");
  if (!in_unit(budget)) throw ValidationError("budget must lie in [0,1]");
  if (!in_unit(priority)) throw ValidationError("priority must lie in [0,1]");
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

NegotiationInstance NegotiationInstance::swapped() const {
  NegotiationInstance out = *this;
  std::swap(out.agents[0], out.agents[1]);
  if (reference) out.reference = Vec2{reference->y, reference->x};
  return out;
}

void NegotiationInstance::validate() const {
  if (!(radius > 0.0) || !std::isfinite(radius)) throw ValidationError("radius must be > 0");
  for (const auto& a : agents) {
    a.validate();
    if (!(a.disagreement < radius)) throw ValidationError("disagreement must be below the radius");
  }
  if (reference && !(in_unit(reference->x) && in_unit(reference->y)))
    throw ValidationError("reference utility must lie in [0,1]^2");
}

SplitCounts split_counts_for(std::size_t n) {
  SplitCounts c;
  c.train = n * 8 / 10;
  c.val = n / 10;
  c.test = n - c.train - c.val;
  return c;
}

DatasetSplit::DatasetSplit(std::vector<NegotiationInstance> instances, std::uint64_t seed,
                           double radius)
    : seed_(seed), radius_(radius) {
  std::stable_partition(instances.begin(), instances.end(),
                        [](const auto& i) { return i.split == Split::train; });
  auto rest = std::find_if(instances.begin(), instances.end(),
                           [](const auto& i) { return i.split != Split::train; });
  std::stable_partition(rest, instances.end(),
                        [](const auto& i) { return i.split == Split::val; });
  for (const auto& i : instances) {
    switch (i.split) {
      case Split::train: ++counts_.train; break;
      case Split::val: ++counts_.val; break;
      case Split::test: ++counts_.test; break;
    }
  }
  instances_ = std::move(instances);
}

std::vector<NegotiationInstance> DatasetSplit::subset(Split s) const {
  std::vector<NegotiationInstance> out;
  for (const auto& i : instances_)
    if (i.split == s) out.push_back(i);
  return out;
}

DatasetSplit generate_synthetic(std::size_t count, std::uint64_t seed, double radius) {
  if (count < 1) throw ConfigError("count must be >= 1");
  if (!(radius > 0.4 * std::sqrt(2.0)) || !std::isfinite(radius))
    throw ConfigError("radius must exceed 0.4*sqrt(2) so every IR region is nonempty");
  Rng rng(derive_seed(seed, "dataset"));
  std::vector<NegotiationInstance> items(count);
  for (std::size_t k = 0; k < count; ++k) {
    auto& inst = items[k];
    inst.id = k;
    inst.radius = radius;
    for (auto& a : inst.agents) {
      a.disagreement = rng.uniform(0.05, 0.4);
      a.budget = rng.uniform();
      a.priority = rng.uniform();
    }
    inst.reference = solve_nbs({radius, inst.disagreement()});
  }
  return DatasetSplit(assign_splits(std::move(items), seed), seed, radius);
}

namespace {

double field_number(const json& obj, const char* key, std::size_t line, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_number())
    throw ValidationError("line " + std::to_string(line) + ": field '" + where + key +
                          "' missing or not a number");
  return it->get<double>();
}

AgentFeatures parse_agent(const json& j, const char* name, std::size_t line) {
  auto it = j.find(name);
  if (it == j.end() || !it->is_object())
    throw ValidationError("line " + std::to_string(line) + ": field '" + name +
                          "' missing or not an object");
  const std::string where = std::string(name) + ".";
  for (const auto& [key, _] : it->items())
    if (key != "d" && key != "budget" && key != "priority")
      throw ValidationError("line " + std::to_string(line) + ": unknown field '" + where + key + "'");
  AgentFeatures a;
  a.disagreement = it->contains("d") ? field_number(*it, "d", line, where) : 0.0;
  a.budget = field_number(*it, "budget", line, where);
  a.priority = field_number(*it, "priority", line, where);
  try {
    a.validate();
  } catch (const ValidationError& e) {
    throw ValidationError("line " + std::to_string(line) + ": field '" + name + "': " + e.what());
  }
  return a;
}

NegotiationInstance parse_record(const std::string& text, std::size_t line) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError("line " + std::to_string(line) + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw ValidationError("line " + std::to_string(line) + ": record is not an object");
  for (const auto& [key, _] : j.items())
    if (key != "a1" && key != "a2" && key != "u" && key != "id" && key != "split")
      throw ValidationError("line " + std::to_string(line) + ": unknown field '" + key + "'");
  NegotiationInstance inst;
  inst.radius = 1.0;
  inst.agents[0] = parse_agent(j, "a1", line);
  inst.agents[1] = parse_agent(j, "a2", line);
  if (auto it = j.find("u"); it != j.end()) {
    if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number())
      throw ValidationError("line " + std::to_string(line) + ": field 'u' must be [number, number]");
    const Vec2 u{(*it)[0].get<double>(), (*it)[1].get<double>()};
    if (!(in_unit(u.x) && in_unit(u.y)))
      throw ValidationError("line " + std::to_string(line) + ": field 'u' outside [0,1]^2");
    inst.reference = u;
  } else {
    throw ValidationError("line " + std::to_string(line) + ": field 'u' missing");
  }
  if (auto it = j.find("id"); it != j.end()) {
    if (!it->is_number_unsigned())
      throw ValidationError("line " + std::to_string(line) + ": field 'id' must be a non-negative integer");
    inst.id = it->get<std::uint64_t>();
  } else {
    inst.id = line - 1;
  }
  inst.validate();
  return inst;
}

std::vector<NegotiationInstance> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<NegotiationInstance> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(text, line));
  }
  return out;
}

}  // namespace

DatasetSplit ingest_records(const std::filesystem::path& path) {
  auto items = read_records(path);
  if (items.empty()) return DatasetSplit({}, kIngestSplitSeed, 1.0);
  return DatasetSplit(assign_splits(std::move(items), kIngestSplitSeed), kIngestSplitSeed, 1.0);
}

std::string record_to_json_line(const NegotiationInstance& inst) {
  auto agent = [](const AgentFeatures& a) {
    return json{{"d", a.disagreement}, {"budget", a.budget}, {"priority", a.priority}};
  };
  json j{{"id", inst.id}, {"a1", agent(inst.agents[0])}, {"a2", agent(inst.agents[1])}};
  if (inst.reference) j["u"] = {inst.reference->x, inst.reference->y};
  j["split"] = to_string(inst.split);
  return j.dump();
}

void write_dataset(const std::filesystem::path& path, const DatasetSplit& data) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  for (const auto& inst : data.instances()) out << record_to_json_line(inst) << '\n';
  json meta{{"format", "nashdiff-dataset-v1"},
            {"seed", data.seed()},
            {"radius", data.radius()},
            {"counts", {{"train", data.counts().train}, {"val", data.counts().val}, {"test", data.counts().test}}}};
  std::ofstream m(path.string() + ".meta.json");
  m << meta.dump(2) << '\n';
}

DatasetSplit load_dataset(const std::filesystem::path& path) {
  const std::filesystem::path meta_path = path.string() + ".meta.json";
  if (!std::filesystem::exists(meta_path)) return ingest_records(path);
  std::ifstream m(meta_path);
  const json meta = json::parse(m);
  const SplitCounts c{meta.at("counts").at("train").get<std::size_t>(),
                      meta.at("counts").at("val").get<std::size_t>(),
                      meta.at("counts").at("test").get<std::size_t>()};
  const double radius = meta.at("radius").get<double>();
  auto items = read_records(path);
  if (items.size() != c.total())
    throw ValidationError("record count does not match " + meta_path.string());
  for (std::size_t k = 0; k < items.size(); ++k) {
    items[k].radius = radius;
    items[k].split = k < c.train ? Split::train : (k < c.train + c.val ? Split::val : Split::test);
  }
  return DatasetSplit(std::move(items), meta.at("seed").get<std::uint64_t>(), radius);
}

NegotiationInstance equalize_disagreement(const NegotiationInstance& inst) {
  NegotiationInstance out = inst;
  const double mean = 0.5 * (inst.agents[0].disagreement + inst.agents[1].disagreement);
  out.agents[0].disagreement = mean;
  out.agents[1].disagreement = mean;
  return out;
}

}  // namespace nashdiff
