#include "nashdiff/checkpoint.hpp"

#include <fstream>
#include <map>

#include "nashdiff/errors.hpp"

namespace nashdiff {

using nlohmann::json;

void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params,
                     std::uint64_t seed, const json& meta) {
  json arrays = json::array();
  for (const auto* p : params)
    arrays.push_back({{"name", p->name},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()},
                      {"data", p->value.data()}});
  const json doc{{"format", kCheckpointFormat}, {"seed", seed}, {"meta", meta}, {"arrays", arrays}};
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
}

json load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("checkpoint " + path.string() + ": " + e.what());
  }
  if (doc.value("format", "") != kCheckpointFormat)
    throw ValidationError("checkpoint " + path.string() + ": unsupported format tag");
  std::map<std::string, const json*> by_name;
  for (const auto& a : doc.at("arrays")) by_name[a.at("name").get<std::string>()] = &a;
  for (auto* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw ValidationError("checkpoint missing array " + p->name);
    const json& a = *it->second;
    const auto rows = a.at("rows").get<std::size_t>();
    const auto cols = a.at("cols").get<std::size_t>();
    if (rows != p->value.rows() || cols != p->value.cols())
      throw ValidationError("checkpoint shape mismatch for " + p->name);
    p->value = Tensor2D(rows, cols, a.at("data").get<std::vector<double>>());
    p->grad = Tensor2D(rows, cols);
    ++p->version;
  }
  json meta = doc.value("meta", json::object());
  meta["seed"] = doc.at("seed");
  return meta;
}

}  // namespace nashdiff
