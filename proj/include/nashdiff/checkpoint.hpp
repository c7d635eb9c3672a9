#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include <json.hpp>

#include "nashdiff/tensor.hpp"

namespace nashdiff {

inline constexpr const char* kCheckpointFormat = "nashdiff-checkpoint-v1";

// JSON document: {"format", "seed", "meta", "arrays": [{"name", "rows", "cols", "data"}]}.
// Doubles round-trip exactly.
void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params,
                     std::uint64_t seed, const nlohmann::json& meta = nlohmann::json::object());

// Fills every parameter by name; missing names, shape mismatches and format
// tag mismatches throw ValidationError. Returns the stored meta object with
// the seed under "seed".
nlohmann::json load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params);

}  // namespace nashdiff
