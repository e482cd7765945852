#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sallie/bundle.hpp"
#include "sallie/detector.hpp"

namespace sallie {

struct ScoredLabel {
  double score = 0.0;
  Label label = Label::kBenign;
};

struct RocPoint {
  double threshold = 0.0;
  std::size_t false_positives = 0;  // benign with score >= threshold
  std::size_t false_negatives = 0;  // malicious with score < threshold
  double fpr = 0.0;
  double fnr = 0.0;
  bool sentinel = false;
};

/// Points sorted by threshold, descending. The first point is a sentinel just above the
/// largest observed score (FPR 0, FNR 1); the rest are the distinct observed scores.
struct RocCurve {
  std::vector<RocPoint> points;
  std::size_t num_benign = 0;
  std::size_t num_malicious = 0;
};

/// Throws kMissingClass unless both classes are present, kNonFinite on NaN/Inf scores.
RocCurve build_roc(std::span<const ScoredLabel> scores);

/// fp / num_benign <= cap, decided on integers. The cap is read to nine decimal places,
/// so a cap of 0.001 admits exactly one false positive per thousand benign samples.
bool fpr_within_cap(std::size_t false_positives, std::size_t num_benign, double fpr_cap);

struct ThresholdChoice {
  double threshold = 0.0;
  double fpr = 0.0;
  double fnr = 1.0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  bool feasible = false;  // false when only the sentinel satisfies the cap
};

/// Minimal FNR among thresholds with FPR <= cap; ties go to the larger threshold.
ThresholdChoice select_threshold(const RocCurve& roc, double fpr_cap);

/// {full, first half, middle, second half, last quarter}; requires L >= 4.
std::vector<LayerRange> default_layer_ranges(std::size_t num_layers);

struct GridSpec {
  std::vector<std::size_t> ks;
  std::vector<std::optional<std::size_t>> cs;
  std::vector<LayerRange> ranges;
};

/// k in {3,5,7,9,11}, c in {64,128,256,512,none}, default_layer_ranges(L).
GridSpec default_grid(std::size_t num_layers);

struct GridRow {
  Modality modality = Modality::kText;
  std::size_t k = 0;
  std::optional<std::size_t> c;
  LayerRange range;
  bool evaluated = false;  // false when the configuration could not be fitted (see reason)
  double threshold = 0.0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
  std::size_t num_benign = 0;
  std::size_t num_malicious = 0;
  double fpr = 0.0;
  double fnr = 1.0;
  bool feasible = false;
  std::string reason;
};

struct GridResult {
  std::vector<GridRow> rows;
  std::map<Modality, ProbeConfig> winners;  // absent when no configuration was feasible
};

/// Winner ordering: lower FNR, then smaller k, smaller c (none last), narrower range,
/// lower range, larger threshold. Only meaningful between feasible rows of one modality.
bool preferred(const GridRow& a, const GridRow& b);

/// Fits every (k, c, range) configuration on the modality's training rows, scores the
/// modality's validation rows and calibrates each under the FPR cap. Configuration
/// failures (c above rank, k above reference count) are recorded, not thrown.
GridResult grid_search(const ActivationBundle& train, const ActivationBundle& valid, Modality m,
                       const GridSpec& grid, double fpr_cap, std::size_t workers = 1);

std::string format_grid_table(const GridResult& result);
std::string format_grid_jsonl(const GridResult& result);

}  // namespace sallie
