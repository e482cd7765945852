#include "sallie/presets.hpp"

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "sallie/error.hpp"

#ifndef SALLIE_DEFAULT_PRESET_DIR
#define SALLIE_DEFAULT_PRESET_DIR "presets"
#endif

namespace sallie {

namespace {

nlohmann::json read_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorCode::kMissingFile, "cannot open " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, file.string() + ": " + e.what());
  }
}

Modality modality_key(const std::string& s, const std::filesystem::path& file) {
  auto m = parse_modality(s);
  if (!m) fail(ErrorCode::kParse, file.string() + ": unknown modality '" + s + "'");
  return *m;
}

}  // namespace

std::filesystem::path preset_dir() {
  if (const char* env = std::getenv("SALLIE_PRESET_DIR"); env && *env) return env;
  return SALLIE_DEFAULT_PRESET_DIR;
}

std::vector<ModelPreset> load_presets(const std::filesystem::path& file) {
  const auto j = read_json(file);
  std::vector<ModelPreset> out;
  try {
    if (j.at("format_version").get<int>() != 1) fail(ErrorCode::kUnsupportedVersion, file.string() + ": unsupported format_version");
    for (const auto& p : j.at("presets")) {
      ModelPreset mp;
      mp.name = p.at("name").get<std::string>();
      mp.num_layers = p.at("num_layers").get<std::size_t>();
      mp.hidden_dim = p.at("hidden_dim").get<std::size_t>();
      for (Modality m : kAllModalities) {
        const std::string key(to_string(m));
        if (!p.contains(key)) continue;
        const auto& c = p.at(key);
        ProbeConfig cfg;
        cfg.modality = m;
        cfg.k = c.at("k").get<std::size_t>();
        if (!c.at("c").is_null()) cfg.c = c.at("c").get<std::size_t>();
        cfg.threshold = c.at("tau").get<double>();
        cfg.layers = {c.at("layers").at(0).get<std::size_t>(), c.at("layers").at(1).get<std::size_t>()};
        validate_config(cfg, mp.num_layers);
        mp.configs[m] = cfg;
        if (c.contains("validation_fnr")) mp.validation_fnr[m] = c.at("validation_fnr").get<double>();
      }
      out.push_back(std::move(mp));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, file.string() + ": " + e.what());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kInvalidArgument) throw;
    fail(ErrorCode::kParse, file.string() + ": " + e.what());
  }
  return out;
}

ModelPreset find_preset(const std::filesystem::path& file, const std::string& name) {
  auto all = load_presets(file);
  std::string known;
  for (auto& p : all) {
    if (p.name == name) return std::move(p);
    known += (known.empty() ? "" : ", ") + p.name;
  }
  fail(ErrorCode::kInvalidArgument, "unknown preset '" + name + "' (known: " + known + ")");
}

BaselineThresholds load_baseline_thresholds(const std::filesystem::path& file) {
  const auto j = read_json(file);
  BaselineThresholds out;
  try {
    if (j.at("format_version").get<int>() != 1) fail(ErrorCode::kUnsupportedVersion, file.string() + ": unsupported format_version");
    for (const auto& [method, per] : j.at("thresholds").items()) {
      for (const auto& [m, v] : per.items()) out[method][modality_key(m, file)] = v.get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, file.string() + ": " + e.what());
  }
  return out;
}

}  // namespace sallie
