#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sallie/bundle.hpp"
#include "sallie/detector.hpp"

namespace sallie {

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  void add(Label label, int verdict);
  ConfusionCounts& operator+=(const ConfusionCounts& o);
  bool operator==(const ConfusionCounts&) const = default;
};

/// Ratios are nullopt when their denominator is zero; F1 is undefined when precision or
/// recall is, or when both are zero.
struct MetricBlock {
  ConfusionCounts counts;
  std::optional<double> fpr;
  std::optional<double> fnr;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
};

MetricBlock compute_metrics(const ConfusionCounts& counts);

enum class SliceKey { kDatasetTag, kModality, kAttackType };
std::string_view to_string(SliceKey k);

struct EvalReport {
  std::string method = "SALLIE";
  MetricBlock overall;
  std::map<std::pair<SliceKey, std::string>, MetricBlock> slices;
};

/// Aggregates verdicts (1 = attack) against labels, overall and per slice.
EvalReport evaluate_verdicts(std::span<const SampleRecord> records, std::span<const int> verdicts,
                             std::string method = "SALLIE");

EvalReport evaluate(const FittedDetector& det, const ActivationBundle& test, std::size_t workers = 1);

/// Aligned plain-text tables: overall, F1 by modality, FNR per attack dataset, FPR per
/// benign dataset, and per attack type. Values rounded to two decimals.
std::string format_report_table(std::span<const EvalReport> reports);
/// One JSON object per (method, slice) at full precision; undefined values are null.
std::string format_report_jsonl(std::span<const EvalReport> reports);

}  // namespace sallie
