#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nashdiff/vec2.hpp"

namespace nashdiff {

inline constexpr int kNumAgents = 2;
inline constexpr int kFeatureDim = 3;

// Per-agent strategic features [disagreement, budget, priority].
struct AgentFeatures {
  double disagreement = 0.0;
  double budget = 0.0;
  double priority = 0.0;

  std::array<double, kFeatureDim> as_array() const { return {disagreement, budget, priority}; }
  void validate() const;
};

enum class Split { train, val, test };

const char* to_string(Split s);

struct NegotiationInstance {
  std::uint64_t id = 0;
  std::array<AgentFeatures, kNumAgents> agents{};
  double radius = 1.0;
  std::optional<UtilityVector> reference;
  Split split = Split::train;

  Vec2 disagreement() const { return {agents[0].disagreement, agents[1].disagreement}; }
  NegotiationInstance swapped() const;
  void validate() const;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;

  std::size_t total() const { return train + val + test; }
  friend bool operator==(const SplitCounts&, const SplitCounts&) = default;
};

// 80/10/10 by floor; the remainder goes to test.
SplitCounts split_counts_for(std::size_t n);

// Immutable after construction. Instances are stored grouped by split in
// train, val, test order.
class DatasetSplit {
 public:
  DatasetSplit() = default;
  DatasetSplit(std::vector<NegotiationInstance> instances, std::uint64_t seed, double radius);

  const std::vector<NegotiationInstance>& instances() const { return instances_; }
  std::vector<NegotiationInstance> subset(Split s) const;
  const SplitCounts& counts() const { return counts_; }
  std::uint64_t seed() const { return seed_; }
  double radius() const { return radius_; }
  bool empty() const { return instances_.empty(); }
  std::size_t size() const { return instances_.size(); }

 private:
  std::vector<NegotiationInstance> instances_;
  SplitCounts counts_;
  std::uint64_t seed_ = 0;
  double radius_ = 1.0;
};

// Synthetic NTU dyads: d_i ~ U(0.05, 0.4) independently per agent, budget and
// priority ~ U(0, 1), reference utility = the oracle NBS on the arc of the
// given radius.
DatasetSplit generate_synthetic(std::size_t count, std::uint64_t seed, double radius = 1.0);

inline constexpr std::uint64_t kIngestSplitSeed = 42;

// Line-delimited JSON records; see README for the schema.
DatasetSplit ingest_records(const std::filesystem::path& path);

// Writes records grouped by split plus a sidecar `<path>.meta.json`.
void write_dataset(const std::filesystem::path& path, const DatasetSplit& data);

// Reads a file written by write_dataset (uses the sidecar to restore splits);
// falls back to ingest_records when no sidecar exists.
DatasetSplit load_dataset(const std::filesystem::path& path);

std::string record_to_json_line(const NegotiationInstance& inst);

// Equalizes disagreement points to their mean (counterfactual intervention).
NegotiationInstance equalize_disagreement(const NegotiationInstance& inst);

}  // namespace nashdiff
