#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sallie/bundle.hpp"
#include "sallie/detector.hpp"

namespace sallie {

struct ModelPreset {
  std::string name;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::map<Modality, ProbeConfig> configs;
  std::map<Modality, double> validation_fnr;  // as reported alongside the configuration
};

/// Directory holding the shipped preset files (compiled in; SALLIE_PRESET_DIR overrides).
std::filesystem::path preset_dir();

std::vector<ModelPreset> load_presets(const std::filesystem::path& file);
/// Throws kInvalidArgument naming the known presets when `name` is absent.
ModelPreset find_preset(const std::filesystem::path& file, const std::string& name);

/// method -> modality -> threshold.
using BaselineThresholds = std::map<std::string, std::map<Modality, double>>;
BaselineThresholds load_baseline_thresholds(const std::filesystem::path& file);

}  // namespace sallie
