#include "sallie/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <json.hpp>

#include "sallie/error.hpp"
#include "sallie/format.hpp"

namespace sallie {

RocCurve build_roc(std::span<const ScoredLabel> scores) {
  RocCurve roc;
  std::vector<std::pair<double, Label>> sorted;
  sorted.reserve(scores.size());
  for (const auto& s : scores) {
    if (!std::isfinite(s.score)) fail(ErrorCode::kNonFinite, "non-finite score in ROC input");
    sorted.emplace_back(s.score, s.label);
    (s.label == Label::kMalicious ? roc.num_malicious : roc.num_benign) += 1;
  }
  if (roc.num_benign == 0 || roc.num_malicious == 0) {
    fail(ErrorCode::kMissingClass, "ROC needs at least one benign and one malicious score");
  }
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  auto make_point = [&](double t, std::size_t fp, std::size_t tp, bool sentinel) {
    RocPoint p;
    p.threshold = t;
    p.false_positives = fp;
    p.false_negatives = roc.num_malicious - tp;
    p.fpr = static_cast<double>(fp) / static_cast<double>(roc.num_benign);
    p.fnr = static_cast<double>(p.false_negatives) / static_cast<double>(roc.num_malicious);
    p.sentinel = sentinel;
    return p;
  };

  roc.points.push_back(make_point(std::nextafter(sorted.front().first, INFINITY), 0, 0, true));
  std::size_t fp = 0, tp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double t = sorted[i].first;
    // Everything scoring >= t is flagged at threshold t.
    while (i < sorted.size() && sorted[i].first == t) {
      (sorted[i].second == Label::kMalicious ? tp : fp) += 1;
      ++i;
    }
    roc.points.push_back(make_point(t, fp, tp, false));
  }
  return roc;
}

bool fpr_within_cap(std::size_t false_positives, std::size_t num_benign, double fpr_cap) {
  if (!(fpr_cap >= 0.0 && fpr_cap <= 1.0)) fail(ErrorCode::kInvalidArgument, "fpr cap must lie in [0, 1]");
  constexpr long long kScale = 1'000'000'000;
  const auto cap_num = static_cast<unsigned __int128>(std::llround(fpr_cap * static_cast<double>(kScale)));
  return static_cast<unsigned __int128>(false_positives) * kScale <= cap_num * num_benign;
}

ThresholdChoice select_threshold(const RocCurve& roc, double fpr_cap) {
  if (roc.points.empty()) fail(ErrorCode::kInvalidArgument, "empty ROC curve");
  const RocPoint* best = nullptr;
  for (const auto& p : roc.points) {
    if (!fpr_within_cap(p.false_positives, roc.num_benign, fpr_cap)) continue;
    // Points run from high to low threshold, so strict improvement keeps the larger tau on ties.
    if (best == nullptr || p.false_negatives < best->false_negatives) best = &p;
  }
  ThresholdChoice out;
  // The sentinel always satisfies any cap >= 0, so best is set.
  out.threshold = best->threshold;
  out.fpr = best->fpr;
  out.fnr = best->fnr;
  out.false_positives = best->false_positives;
  out.false_negatives = best->false_negatives;
  out.feasible = !best->sentinel;
  return out;
}

std::vector<LayerRange> default_layer_ranges(std::size_t L) {
  if (L < 4) fail(ErrorCode::kInvalidArgument, "default layer ranges need at least 4 layers, got " + std::to_string(L));
  return {
      {0, L - 1},
      {0, L / 2 - 1},
      {L / 4, 3 * L / 4 - 1},
      {L / 2, L - 1},
      {3 * L / 4, L - 1},
  };
}

GridSpec default_grid(std::size_t num_layers) {
  return {{3, 5, 7, 9, 11}, {64, 128, 256, 512, std::nullopt}, default_layer_ranges(num_layers)};
}

bool preferred(const GridRow& a, const GridRow& b) {
  if (a.false_negatives != b.false_negatives) {
    // Compare FNR as fractions; within a modality the malicious totals are equal.
    const auto lhs = static_cast<unsigned __int128>(a.false_negatives) * b.num_malicious;
    const auto rhs = static_cast<unsigned __int128>(b.false_negatives) * a.num_malicious;
    if (lhs != rhs) return lhs < rhs;
  }
  if (a.k != b.k) return a.k < b.k;
  if (a.c != b.c) {
    if (!a.c) return false;
    if (!b.c) return true;
    return *a.c < *b.c;
  }
  if (a.range.size() != b.range.size()) return a.range.size() < b.range.size();
  if (a.range.lo != b.range.lo) return a.range.lo < b.range.lo;
  return a.threshold > b.threshold;
}

namespace {

std::vector<std::size_t> indices_of(const ActivationBundle& b, Modality m) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < b.records.size(); ++i) {
    if (b.records[i].modality == m) out.push_back(i);
  }
  return out;
}

void require_both_classes(const ActivationBundle& b, const std::vector<std::size_t>& idx, const std::string& what) {
  bool benign = false, malicious = false;
  for (auto i : idx) (b.records[i].label == Label::kMalicious ? malicious : benign) = true;
  if (!benign || !malicious) fail(ErrorCode::kMissingClass, what + " lacks benign or malicious samples");
}

// Prefix counts for one (c, layer) cell, or the reason it could not be fitted.
struct Cell {
  std::vector<std::uint32_t> counts;  // Q x k_max
  std::string error;
};

}  // namespace

GridResult grid_search(const ActivationBundle& train, const ActivationBundle& valid, Modality m,
                       const GridSpec& grid, double fpr_cap, std::size_t workers) {
  const std::string mname(to_string(m));
  if (grid.ks.empty() || grid.cs.empty() || grid.ranges.empty()) fail(ErrorCode::kInvalidArgument, "empty grid");
  if (!(fpr_cap >= 0.0 && fpr_cap <= 1.0)) fail(ErrorCode::kInvalidArgument, "fpr cap must lie in [0, 1]");
  if (train.num_layers() != valid.num_layers() || train.hidden_dim() != valid.hidden_dim()) {
    fail(ErrorCode::kDimensionMismatch, "train and validation bundles disagree on L or d");
  }
  const std::size_t L = train.num_layers();
  for (const auto& r : grid.ranges) {
    validate_config(ProbeConfig{m, 1, std::nullopt, r, 0.5}, L);
  }
  for (auto k : grid.ks) {
    if (k == 0) fail(ErrorCode::kInvalidArgument, "k must be positive");
  }
  for (const auto& c : grid.cs) {
    if (c && *c == 0) fail(ErrorCode::kInvalidArgument, "c must be positive or none");
  }

  const auto tidx = indices_of(train, m);
  const auto vidx = indices_of(valid, m);
  require_both_classes(train, tidx, "training set for modality " + mname);
  require_both_classes(valid, vidx, "validation set for modality " + mname);

  std::vector<std::uint8_t> train_labels;
  for (auto i : tidx) train_labels.push_back(static_cast<std::uint8_t>(train.records[i].label));
  std::vector<std::string> valid_names;
  for (auto i : vidx) valid_names.push_back(valid.records[i].sample_id);

  const std::size_t M = tidx.size();
  const std::size_t Q = vidx.size();
  std::size_t k_max = 0;
  for (auto k : grid.ks) {
    if (k <= M) k_max = std::max(k_max, k);
  }

  std::set<std::size_t> needed;
  for (const auto& r : grid.ranges) {
    for (std::size_t l = r.lo; l <= r.hi; ++l) needed.insert(l);
  }

  // cells[ci][l]: computed once and shared by every k and every range containing l.
  std::vector<std::map<std::size_t, Cell>> cells(grid.cs.size());
  if (k_max > 0) {
    for (auto l : needed) {
      const Matrix train_rows = train.layers[l].select_rows(tidx);
      const Matrix valid_rows = valid.layers[l].select_rows(vidx);
      std::optional<PcaDecomposition> decomposition;
      std::string decomposition_error;
      for (std::size_t ci = 0; ci < grid.cs.size(); ++ci) {
        Cell& cell = cells[ci][l];
        const auto& c = grid.cs[ci];
        try {
          std::optional<PcaModel> pca;
          if (c) {
            if (!decomposition && decomposition_error.empty()) {
              try {
                decomposition.emplace(train_rows);
              } catch (const Error& e) {
                decomposition_error = e.what();
              }
            }
            if (!decomposition) fail(ErrorCode::kRankDeficient, decomposition_error);
            pca = decomposition->truncate(*c);
          }
          const auto probe = build_layer_probe(train_rows, train_labels, l, std::move(pca));
          const auto queries = prepare_queries(probe, valid_rows, valid_names);
          cell.counts = malicious_prefix_counts(probe.index, queries, k_max, workers);
        } catch (const Error& e) {
          cell.error = "layer " + std::to_string(l) + ": " + e.what();
        }
      }
    }
  }

  GridResult result;
  std::vector<ScoredLabel> scored(Q);
  for (std::size_t q = 0; q < Q; ++q) scored[q].label = valid.records[vidx[q]].label;

  for (std::size_t ci = 0; ci < grid.cs.size(); ++ci) {
    for (const auto& range : grid.ranges) {
      std::string cell_error;
      for (std::size_t l = range.lo; l <= range.hi && cell_error.empty() && k_max > 0; ++l) {
        cell_error = cells[ci][l].error;
      }
      for (auto k : grid.ks) {
        GridRow row;
        row.modality = m;
        row.k = k;
        row.c = grid.cs[ci];
        row.range = range;
        if (k > M) {
          row.reason = "k=" + std::to_string(k) + " exceeds the " + std::to_string(M) + " training samples";
        } else if (!cell_error.empty()) {
          row.reason = cell_error;
        } else {
          std::vector<std::uint32_t> hits(range.size());
          for (std::size_t q = 0; q < Q; ++q) {
            for (std::size_t j = 0; j < range.size(); ++j) {
              hits[j] = cells[ci][range.lo + j].counts[q * k_max + (k - 1)];
            }
            scored[q].score = ensemble_score(hits, k);
          }
          const auto choice = select_threshold(build_roc(scored), fpr_cap);
          row.evaluated = true;
          row.threshold = choice.threshold;
          row.false_positives = choice.false_positives;
          row.false_negatives = choice.false_negatives;
          row.fpr = choice.fpr;
          row.fnr = choice.fnr;
          row.feasible = choice.feasible;
          if (!choice.feasible) row.reason = "no threshold meets the FPR cap";
        }
        for (auto i : vidx) (valid.records[i].label == Label::kMalicious ? row.num_malicious : row.num_benign) += 1;
        result.rows.push_back(std::move(row));
      }
    }
  }

  const GridRow* best = nullptr;
  for (const auto& row : result.rows) {
    if (row.feasible && (best == nullptr || preferred(row, *best))) best = &row;
  }
  if (best) result.winners[m] = ProbeConfig{m, best->k, best->c, best->range, best->threshold};
  return result;
}

namespace {

// Mean FNR over evaluated rows, grouped by key.
template <typename Key, typename Fn>
std::vector<std::pair<Key, double>> mean_fnr_by(const std::vector<GridRow>& rows, Fn key) {
  std::map<Key, std::pair<double, std::size_t>> acc;
  for (const auto& r : rows) {
    if (!r.evaluated) continue;
    auto& [sum, n] = acc[key(r)];
    sum += r.fnr;
    ++n;
  }
  std::vector<std::pair<Key, double>> out;
  for (const auto& [k, v] : acc) out.emplace_back(k, v.first / static_cast<double>(v.second));
  return out;
}

// Keys sort numerically with "none" (no PCA) last.
std::size_t c_key(const GridRow& r) { return r.c.value_or(SIZE_MAX); }
std::string c_label(std::size_t key) { return key == SIZE_MAX ? "none" : std::to_string(key); }

}  // namespace

std::string format_grid_table(const GridResult& result) {
  std::ostringstream out;
  out << fmt_row({"modality", "k", "c", "layers", "tau", "FPR", "FNR", "feasible", "reason"},
                 {8, 4, 6, 8, 10, 10, 10, 8, 0})
      << '\n';
  for (const auto& r : result.rows) {
    out << fmt_row({std::string(to_string(r.modality)), std::to_string(r.k), format_c(r.c), r.range.str(),
                    r.evaluated ? fixed(r.threshold, 6) : "-", r.evaluated ? fixed(r.fpr, 6) : "-",
                    r.evaluated ? fixed(r.fnr, 6) : "-", r.feasible ? "yes" : "no", r.reason},
                   {8, 4, 6, 8, 10, 10, 10, 8, 0})
        << '\n';
  }
  out << "\nmean FNR by k\n";
  for (const auto& [k, v] : mean_fnr_by<std::size_t>(result.rows, [](const GridRow& r) { return r.k; })) {
    out << fmt_row({std::to_string(k), fixed(v, 6)}, {6, 0}) << '\n';
  }
  out << "\nmean FNR by c\n";
  for (const auto& [c, v] : mean_fnr_by<std::size_t>(result.rows, c_key)) {
    out << fmt_row({c_label(c), fixed(v, 6)}, {6, 0}) << '\n';
  }
  out << '\n';
  for (Modality m : kAllModalities) {
    bool any = false;
    for (const auto& r : result.rows) any = any || r.modality == m;
    if (!any) continue;
    auto it = result.winners.find(m);
    if (it == result.winners.end()) {
      out << "winner " << to_string(m) << ": none feasible\n";
      continue;
    }
    const auto& w = it->second;
    out << "winner " << to_string(m) << ": k=" << w.k << " c=" << format_c(w.c) << " layers=" << w.layers.str()
        << " tau=" << fixed(w.threshold, 6) << '\n';
  }
  return out.str();
}

std::string format_grid_jsonl(const GridResult& result) {
  using nlohmann::ordered_json;
  std::ostringstream out;
  for (const auto& r : result.rows) {
    ordered_json j;
    j["modality"] = to_string(r.modality);
    j["k"] = r.k;
    j["c"] = r.c ? ordered_json(*r.c) : ordered_json(nullptr);
    j["layers"] = {r.range.lo, r.range.hi};
    j["evaluated"] = r.evaluated;
    j["tau"] = r.evaluated ? ordered_json(r.threshold) : ordered_json(nullptr);
    j["fp"] = r.false_positives;
    j["fn"] = r.false_negatives;
    j["num_benign"] = r.num_benign;
    j["num_malicious"] = r.num_malicious;
    j["fpr"] = r.evaluated ? ordered_json(r.fpr) : ordered_json(nullptr);
    j["fnr"] = r.evaluated ? ordered_json(r.fnr) : ordered_json(nullptr);
    j["feasible"] = r.feasible;
    j["reason"] = r.reason;
    out << j.dump() << '\n';
  }
  for (const auto& [k, v] : mean_fnr_by<std::size_t>(result.rows, [](const GridRow& r) { return r.k; })) {
    out << ordered_json{{"summary", "mean_fnr_by_k"}, {"k", k}, {"mean_fnr", v}}.dump() << '\n';
  }
  for (const auto& [c, v] : mean_fnr_by<std::size_t>(result.rows, c_key)) {
    ordered_json j{{"summary", "mean_fnr_by_c"}};
    j["c"] = c == SIZE_MAX ? ordered_json(nullptr) : ordered_json(c);
    j["mean_fnr"] = v;
    out << j.dump() << '\n';
  }
  for (const auto& [m, w] : result.winners) {
    ordered_json j{{"winner", to_string(m)}, {"k", w.k}};
    j["c"] = w.c ? ordered_json(*w.c) : ordered_json(nullptr);
    j["layers"] = {w.layers.lo, w.layers.hi};
    j["tau"] = w.threshold;
    out << j.dump() << '\n';
  }
  return out.str();
}

}  // namespace sallie
