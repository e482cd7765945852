#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sallie/bundle.hpp"
#include "sallie/knn.hpp"
#include "sallie/pca.hpp"

namespace sallie {

/// Inclusive range of absolute, 0-based layer indices.
struct LayerRange {
  std::size_t lo = 0;
  std::size_t hi = 0;

  std::size_t size() const { return hi - lo + 1; }
  bool contains(std::size_t l) const { return l >= lo && l <= hi; }
  std::string str() const { return std::to_string(lo) + "-" + std::to_string(hi); }

  auto operator<=>(const LayerRange&) const = default;
};

/// One modality's hyperparameters: neighbours k, PCA components c (nullopt = no PCA),
/// layer range, and decision threshold.
struct ProbeConfig {
  Modality modality = Modality::kText;
  std::size_t k = 1;
  std::optional<std::size_t> c;
  LayerRange layers;
  double threshold = 0.5;

  bool operator==(const ProbeConfig&) const = default;
};

/// Throws kInvalidArgument unless k >= 1, c >= 1 when present, lo <= hi < num_layers and
/// threshold in [0, 1].
void validate_config(const ProbeConfig& config, std::size_t num_layers);

std::string format_c(const std::optional<std::size_t>& c);

struct LayerProbe {
  std::size_t layer = 0;
  std::optional<PcaModel> pca;
  ProbeIndex index;

  bool operator==(const LayerProbe&) const = default;
};

struct ModalityProbes {
  ProbeConfig config;
  std::vector<LayerProbe> probes;  // one per layer of config.layers, ascending

  bool operator==(const ModalityProbes&) const = default;
};

struct FittedDetector {
  std::string model_name;
  std::size_t num_layers = 0;
  std::size_t hidden_dim = 0;
  std::map<Modality, ModalityProbes> modalities;

  /// Throws kMissingModality when the detector was not fitted for m.
  const ModalityProbes& entry(Modality m) const;
  ModalityProbes& entry(Modality m);

  bool operator==(const FittedDetector&) const = default;
};

struct ScoreTrace {
  std::string sample_id;
  std::map<std::size_t, double> per_layer_scores;
  double ensemble_score = 0.0;
  int verdict = 0;  // 1 = attack
  ProbeConfig config_used;
};

/// Uniform layer mean: sum of the neighbour hits divided by k * |range|.
double ensemble_score(std::span<const std::uint32_t> hits_per_layer, std::size_t k);
/// Inclusive decision rule: attack when the ensemble score reaches the threshold.
inline int decide(double ensemble, double threshold) { return ensemble >= threshold ? 1 : 0; }

/// Builds a trace from per-layer malicious-neighbour counts (ascending layers of config.layers).
ScoreTrace assemble_trace(std::string sample_id, const ProbeConfig& config,
                          std::span<const std::uint32_t> hits_per_layer);

/// Fits one probe per (configured modality, layer in range) on that modality's training rows.
FittedDetector fit_detector(const ActivationBundle& train, const std::vector<ProbeConfig>& configs,
                            std::size_t workers = 1);

/// Builds a single layer's probe from the rows of one modality.
LayerProbe fit_layer_probe(const Matrix& rows, const std::vector<std::uint8_t>& labels, std::size_t layer,
                           const std::optional<std::size_t>& c);
/// Same, with an already fitted projection (or none).
LayerProbe build_layer_probe(const Matrix& rows, const std::vector<std::uint8_t>& labels, std::size_t layer,
                             std::optional<PcaModel> pca);

/// Projects and normalizes every row of `rows` for the given probe. Errors name the layer.
QuerySet prepare_queries(const LayerProbe& probe, const Matrix& rows,
                         std::span<const std::string> row_names = {});

ScoreTrace score_input(const FittedDetector& det, const Matrix& activations, Modality m);

/// One trace per sample, in bundle order, each routed by its modality.
std::vector<ScoreTrace> score_bundle(const FittedDetector& det, const ActivationBundle& data,
                                     std::size_t workers = 1);

void save_detector(const FittedDetector& det, const std::filesystem::path& path);
FittedDetector load_detector(const std::filesystem::path& path);

}  // namespace sallie
