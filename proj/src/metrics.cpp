#include "sallie/metrics.hpp"

#include <set>
#include <sstream>

#include <json.hpp>

#include "sallie/error.hpp"
#include "sallie/format.hpp"

namespace sallie {

void ConfusionCounts::add(Label label, int verdict) {
  if (label == Label::kMalicious) {
    (verdict ? tp : fn) += 1;
  } else {
    (verdict ? fp : tn) += 1;
  }
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

namespace {

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricBlock compute_metrics(const ConfusionCounts& c) {
  MetricBlock m;
  m.counts = c;
  m.fpr = ratio(c.fp, c.fp + c.tn);
  m.fnr = ratio(c.fn, c.fn + c.tp);
  m.precision = ratio(c.tp, c.tp + c.fp);
  m.recall = ratio(c.tp, c.tp + c.fn);
  if (m.precision && m.recall && *m.precision + *m.recall > 0.0) {
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  }
  return m;
}

std::string_view to_string(SliceKey k) {
  switch (k) {
    case SliceKey::kDatasetTag: return "dataset";
    case SliceKey::kModality: return "modality";
    case SliceKey::kAttackType: return "attack_type";
  }
  return "?";
}

EvalReport evaluate_verdicts(std::span<const SampleRecord> records, std::span<const int> verdicts,
                             std::string method) {
  if (records.size() != verdicts.size()) {
    fail(ErrorCode::kDimensionMismatch, "verdict count does not match record count");
  }
  ConfusionCounts overall;
  std::map<std::pair<SliceKey, std::string>, ConfusionCounts> slices;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    overall.add(r.label, verdicts[i]);
    slices[{SliceKey::kDatasetTag, r.dataset_tag}].add(r.label, verdicts[i]);
    slices[{SliceKey::kModality, std::string(to_string(r.modality))}].add(r.label, verdicts[i]);
    slices[{SliceKey::kAttackType, std::string(to_string(r.attack_type))}].add(r.label, verdicts[i]);
  }
  EvalReport rep;
  rep.method = std::move(method);
  rep.overall = compute_metrics(overall);
  for (const auto& [key, counts] : slices) rep.slices[key] = compute_metrics(counts);
  return rep;
}

EvalReport evaluate(const FittedDetector& det, const ActivationBundle& test, std::size_t workers) {
  const auto traces = score_bundle(det, test, workers);
  std::vector<int> verdicts;
  verdicts.reserve(traces.size());
  for (const auto& t : traces) verdicts.push_back(t.verdict);
  return evaluate_verdicts(test.records, verdicts);
}

namespace {

std::string two(const std::optional<double>& v) { return fixed(v, 2); }

const MetricBlock* find_slice(const EvalReport& r, SliceKey key, const std::string& value) {
  auto it = r.slices.find({key, value});
  return it == r.slices.end() ? nullptr : &it->second;
}

std::set<std::string> slice_values(std::span<const EvalReport> reports, SliceKey key) {
  std::set<std::string> out;
  for (const auto& r : reports) {
    for (const auto& [k, v] : r.slices) {
      if (k.first == key) out.insert(k.second);
    }
  }
  return out;
}

std::size_t method_width(std::span<const EvalReport> reports) {
  std::size_t w = 6;
  for (const auto& r : reports) w = std::max(w, r.method.size());
  return w;
}

}  // namespace

std::string format_report_table(std::span<const EvalReport> reports) {
  std::ostringstream out;
  const std::size_t mw = method_width(reports);

  out << "Detection performance\n";
  out << fmt_row({"Method", "FPR", "FNR", "Precision", "Recall", "F1", "N"}, {mw, 6, 6, 9, 6, 6, 0}) << '\n';
  for (const auto& r : reports) {
    const auto& m = r.overall;
    out << fmt_row({r.method, two(m.fpr), two(m.fnr), two(m.precision), two(m.recall), two(m.f1),
                    std::to_string(m.counts.total())},
                   {mw, 6, 6, 9, 6, 6, 0})
        << '\n';
  }

  out << "\nF1 by modality\n";
  const auto modalities = slice_values(reports, SliceKey::kModality);
  std::vector<std::string> header{"Method"};
  std::vector<std::size_t> widths{mw};
  for (const auto& m : modalities) {
    header.push_back(m);
    widths.push_back(6);
  }
  out << fmt_row(header, widths) << '\n';
  for (const auto& r : reports) {
    std::vector<std::string> row{r.method};
    for (const auto& m : modalities) {
      const auto* b = find_slice(r, SliceKey::kModality, m);
      row.push_back(b ? two(b->f1) : "-");
    }
    out << fmt_row(row, widths) << '\n';
  }

  // Per-dataset tables: FNR where a dataset holds attacks, FPR where it holds benign samples.
  const auto datasets = slice_values(reports, SliceKey::kDatasetTag);
  std::size_t dw = 7;
  for (const auto& d : datasets) dw = std::max(dw, d.size());
  auto per_dataset = [&](const char* title, const char* metric, bool attack) {
    out << '\n' << title << '\n';
    std::vector<std::string> h{"Dataset", "N"};
    std::vector<std::size_t> w{dw, 6};
    for (const auto& r : reports) {
      h.push_back(r.method + " " + metric);
      w.push_back(r.method.size() + 5);
    }
    out << fmt_row(h, w) << '\n';
    for (const auto& d : datasets) {
      std::size_t n = 0;
      std::vector<std::string> row{d, ""};
      for (const auto& r : reports) {
        const auto* b = find_slice(r, SliceKey::kDatasetTag, d);
        const std::size_t count = b ? (attack ? b->counts.tp + b->counts.fn : b->counts.fp + b->counts.tn) : 0;
        n = std::max(n, count);
        row.push_back(b ? two(attack ? b->fnr : b->fpr) : "-");
      }
      if (n == 0) continue;
      row[1] = std::to_string(n);
      out << fmt_row(row, w) << '\n';
    }
  };
  per_dataset("FNR on attack datasets", "FNR", true);
  per_dataset("FPR on benign datasets", "FPR", false);

  out << "\nFNR by attack type\n";
  std::vector<std::string> h{"Attack"};
  std::vector<std::size_t> w{16};
  for (const auto& r : reports) {
    h.push_back(r.method);
    w.push_back(std::max<std::size_t>(r.method.size(), 6));
  }
  out << fmt_row(h, w) << '\n';
  for (const auto& a : slice_values(reports, SliceKey::kAttackType)) {
    if (a == "none") continue;
    std::vector<std::string> row{a};
    for (const auto& r : reports) {
      const auto* b = find_slice(r, SliceKey::kAttackType, a);
      row.push_back(b ? two(b->fnr) : "-");
    }
    out << fmt_row(row, w) << '\n';
  }
  return out.str();
}

std::string format_report_jsonl(std::span<const EvalReport> reports) {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  auto block = [&](ordered_json j, const MetricBlock& m) {
    j["tp"] = m.counts.tp;
    j["fp"] = m.counts.fp;
    j["tn"] = m.counts.tn;
    j["fn"] = m.counts.fn;
    j["fpr"] = opt(m.fpr);
    j["fnr"] = opt(m.fnr);
    j["precision"] = opt(m.precision);
    j["recall"] = opt(m.recall);
    j["f1"] = opt(m.f1);
    return j;
  };
  std::ostringstream out;
  for (const auto& r : reports) {
    out << block(ordered_json{{"method", r.method}, {"slice", "overall"}, {"value", nullptr}}, r.overall).dump()
        << '\n';
    for (const auto& [key, m] : r.slices) {
      out << block(ordered_json{{"method", r.method}, {"slice", to_string(key.first)}, {"value", key.second}}, m)
                 .dump()
          << '\n';
    }
  }
  return out.str();
}

}  // namespace sallie
