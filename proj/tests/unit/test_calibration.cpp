#include <doctest.h>

#include <cmath>
#include <set>

#include "../oracles/oracles.hpp"
#include "helpers.hpp"
#include "sallie/calibration.hpp"

using namespace sallie;
using testutil::error_code_of;

namespace {

using Scored = std::vector<std::pair<double, Label>>;

std::vector<ScoredLabel> to_labels(const Scored& s) {
  std::vector<ScoredLabel> out;
  for (const auto& [p, y] : s) out.push_back({p, y});
  return out;
}

// Scores on the lattice j / steps, malicious skewed upward, so ties are common.
Scored lattice_scores(std::mt19937_64& rng, std::size_t n, std::size_t steps) {
  Scored out;
  std::binomial_distribution<int> lo(int(steps), 0.25), hi(int(steps), 0.7);
  for (std::size_t i = 0; i < n; ++i) {
    const bool mal = i == 0 || (i > 1 && rng() % 4 == 0);
    out.emplace_back(double(mal ? hi(rng) : lo(rng)) / double(steps), mal ? Label::kMalicious : Label::kBenign);
  }
  return out;
}

ActivationBundle separable_bundle(std::mt19937_64& rng, std::size_t n, std::size_t L, std::size_t d, double gap) {
  auto b = testutil::random_bundle(rng, n, L, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (b.records[i].label != Label::kMalicious) continue;
    for (std::size_t l = 0; l < L; ++l) b.layers[l](i, 0) += float(gap * (l == 0 || l == L - 1 ? 0.2 : 1.0));
  }
  return b;
}

}  // namespace

TEST_SUITE("calibration") {
  TEST_CASE("separated pair") {
    const auto roc = build_roc(to_labels({{0.9, Label::kMalicious}, {0.1, Label::kBenign}}));
    REQUIRE(roc.points.size() == 3);
    CHECK(roc.points[0].sentinel);
    CHECK(roc.points[0].fpr == 0.0);
    CHECK(roc.points[0].fnr == 1.0);
    CHECK(roc.points[1].threshold == 0.9);
    CHECK(roc.points[1].fpr == 0.0);
    CHECK(roc.points[1].fnr == 0.0);
    CHECK(roc.points[2].fpr == 1.0);
    const auto c = select_threshold(roc, 0.001);
    CHECK(c.feasible);
    CHECK(c.threshold == 0.9);
    CHECK(c.fnr == 0.0);
  }

  TEST_CASE("separated classes select the minimal malicious score") {
    const auto c = select_threshold(build_roc(to_labels({{0.2, Label::kBenign},
                                                         {0.4, Label::kBenign},
                                                         {0.6, Label::kMalicious},
                                                         {0.8, Label::kMalicious},
                                                         {1.0, Label::kMalicious}})),
                                    0.001);
    CHECK(c.threshold == 0.6);
    CHECK(c.false_positives == 0);
    CHECK(c.false_negatives == 0);
  }

  TEST_CASE("collapsed scores are infeasible") {
    Scored s;
    for (int i = 0; i < 50; ++i) s.emplace_back(0.0, i % 2 ? Label::kMalicious : Label::kBenign);
    const auto c = select_threshold(build_roc(to_labels(s)), 0.001);
    CHECK(!c.feasible);
    CHECK(c.fnr == 1.0);
    CHECK(c.fpr == 0.0);
  }

  TEST_CASE("single class and non-finite input") {
    CHECK(error_code_of([] { build_roc(to_labels({{0.3, Label::kBenign}})); }) == ErrorCode::kMissingClass);
    CHECK(error_code_of([] { build_roc(to_labels({{0.3, Label::kMalicious}})); }) == ErrorCode::kMissingClass);
    CHECK(error_code_of([] { build_roc(to_labels({{NAN, Label::kMalicious}, {0.1, Label::kBenign}})); }) ==
          ErrorCode::kNonFinite);
  }

  TEST_CASE("exact rational cap") {
    CHECK(fpr_within_cap(1, 1000, 0.001));
    CHECK(!fpr_within_cap(2, 1000, 0.001));
    CHECK(!fpr_within_cap(1, 999, 0.001));
    CHECK(fpr_within_cap(0, 10, 0.001));
    CHECK(fpr_within_cap(3, 3000, 0.001));
    CHECK(fpr_within_cap(5, 5, 1.0));
    CHECK(!fpr_within_cap(1, 5, 0.0));
  }

  TEST_CASE("boundary step: one step lower breaks the cap") {
    // 1000 benign: one at 0.8, one at 0.6; cap 0.001 admits exactly one.
    Scored s;
    for (int i = 0; i < 998; ++i) s.emplace_back(0.2, Label::kBenign);
    s.emplace_back(0.6, Label::kBenign);
    s.emplace_back(0.8, Label::kBenign);
    for (double v : {0.4, 0.6, 0.8, 1.0, 1.0}) s.emplace_back(v, Label::kMalicious);
    const auto c = select_threshold(build_roc(to_labels(s)), 0.001);
    CHECK(c.threshold == 0.8);
    CHECK(c.false_positives == 1);
    CHECK(c.false_negatives == 2);
    const auto o = oracle::exhaustive_select(s, 1, 1000);
    CHECK(o.threshold == c.threshold);
  }

  TEST_CASE("ROC agrees with the recount oracle") {
    std::mt19937_64 rng(41);
    const auto s = lattice_scores(rng, 1000, 30);
    const auto roc = build_roc(to_labels(s));
    double prev_fpr = -1, prev_fnr = 2;
    for (const auto& p : roc.points) {
      const auto [fp, fn] = oracle::recount(s, p.threshold);
      CHECK(p.false_positives == fp);
      CHECK(p.false_negatives == fn);
      CHECK(p.fpr == double(fp) / double(roc.num_benign));
      CHECK(p.fnr == double(fn) / double(roc.num_malicious));
      CHECK(p.fpr >= prev_fpr);
      CHECK(p.fnr <= prev_fnr);
      prev_fpr = p.fpr;
      prev_fnr = p.fnr;
    }
    std::set<double> unique;
    for (const auto& x : s) unique.insert(x.first);
    CHECK(roc.points.size() == unique.size() + 1);
  }

  TEST_CASE("select_threshold equals the exhaustive scan") {
    std::mt19937_64 rng(42);
    for (int t = 0; t < 100; ++t) {
      const std::size_t n = 2 + rng() % 1999;
      const auto s = lattice_scores(rng, n, 1 + rng() % 60);
      const auto c = select_threshold(build_roc(to_labels(s)), 0.001);
      const auto o = oracle::exhaustive_select(s, 1, 1000);
      CHECK(c.threshold == o.threshold);
      CHECK(c.false_positives == o.fp);
      CHECK(c.false_negatives == o.fn);
      CHECK(c.feasible == o.feasible);
      CHECK(fpr_within_cap(c.false_positives, build_roc(to_labels(s)).num_benign, 0.001));
    }
  }

  TEST_CASE("tighter caps never lower the selected FNR") {
    std::mt19937_64 rng(43);
    for (int t = 0; t < 30; ++t) {
      const auto roc = build_roc(to_labels(lattice_scores(rng, 500 + rng() % 1500, 40)));
      double prev = -1;
      for (double cap : {0.5, 0.2, 0.1, 0.05, 0.01, 0.005, 0.001, 0.0}) {
        const auto c = select_threshold(roc, cap);
        CHECK(c.fnr >= prev);
        prev = c.fnr;
      }
    }
  }

  TEST_CASE("default layer ranges") {
    const std::vector<LayerRange> l32{{0, 31}, {0, 15}, {8, 23}, {16, 31}, {24, 31}};
    const std::vector<LayerRange> l24{{0, 23}, {0, 11}, {6, 17}, {12, 23}, {18, 23}};
    CHECK(default_layer_ranges(32) == l32);
    CHECK(default_layer_ranges(24) == l24);
    CHECK(default_layer_ranges(4) == std::vector<LayerRange>{{0, 3}, {0, 1}, {1, 2}, {2, 3}, {3, 3}});
    CHECK(error_code_of([] { default_layer_ranges(3); }) == ErrorCode::kInvalidArgument);
    const auto g = default_grid(34);
    CHECK(g.ks == std::vector<std::size_t>{3, 5, 7, 9, 11});
    REQUIRE(g.cs.size() == 5);
    CHECK(g.cs[0] == 64u);
    CHECK(!g.cs[4]);
    CHECK(g.ranges == default_layer_ranges(34));
  }

  TEST_CASE("winner ordering") {
    GridRow a, b;
    a.feasible = b.feasible = true;
    a.num_malicious = b.num_malicious = 10;
    a.k = 7;
    a.false_negatives = 1;
    b.k = 3;
    b.false_negatives = 3;
    CHECK(preferred(a, b));
    CHECK(!preferred(b, a));
    b.false_negatives = 1;
    CHECK(preferred(b, a));
    a.k = 3;
    a.c = 64;
    b.c = std::nullopt;
    CHECK(preferred(a, b));
    b.c = 64;
    a.range = {0, 7};
    b.range = {4, 7};
    CHECK(preferred(b, a));
    a.range = {2, 5};
    CHECK(preferred(a, b));
    b.range = a.range;
    a.threshold = 0.5;
    b.threshold = 0.6;
    CHECK(preferred(b, a));
  }

  TEST_CASE("grid of one configuration") {
    std::mt19937_64 rng(44);
    const auto train = separable_bundle(rng, 120, 4, 6, 6.0);
    const auto valid = separable_bundle(rng, 60, 4, 6, 6.0);
    const GridSpec g{{3}, {std::nullopt}, {{1, 2}}};
    const auto r = grid_search(train, valid, Modality::kText, g, 0.001);
    REQUIRE(r.rows.size() == 1);
    REQUIRE(r.winners.count(Modality::kText) == 1);
    const auto& w = r.winners.at(Modality::kText);
    CHECK(w.k == 3);
    CHECK(!w.c);
    CHECK(w.layers == LayerRange{1, 2});
    CHECK(w.threshold == r.rows[0].threshold);
  }

  TEST_CASE("grid rows reproduce under refit and are deterministic") {
    std::mt19937_64 rng(45);
    const auto train = separable_bundle(rng, 160, 6, 8, 2.5);
    const auto valid = separable_bundle(rng, 120, 6, 8, 2.5);
    const GridSpec g{{1, 3, 5}, {2, 4, 9, std::nullopt}, default_layer_ranges(6)};
    const auto r = grid_search(train, valid, Modality::kVis, g, 0.01, 1);
    CHECK(r.rows.size() == 3 * 4 * 5);
    std::size_t evaluated = 0;
    for (const auto& row : r.rows) {
      if (row.c == 9u) {
        CHECK(!row.evaluated);
        CHECK(!row.feasible);
        CHECK(!row.reason.empty());
        continue;
      }
      REQUIRE(row.evaluated);
      ++evaluated;
      // Infeasible rows hold the sentinel above 1, so the verdict is applied here directly.
      ProbeConfig pc{Modality::kVis, row.k, row.c, row.range, std::min(row.threshold, 1.0)};
      const auto det = fit_detector(train, {pc});
      const auto vis = select_rows(valid, [](const SampleRecord& s) { return s.modality == Modality::kVis; });
      const auto traces = score_bundle(det, vis);
      std::size_t fp = 0, fn = 0;
      for (std::size_t i = 0; i < traces.size(); ++i) {
        const bool mal = vis.records[i].label == Label::kMalicious;
        const int v = decide(traces[i].ensemble_score, row.threshold);
        if (row.feasible) CHECK(v == traces[i].verdict);
        fp += !mal && v == 1;
        fn += mal && v == 0;
      }
      CHECK(fp == row.false_positives);
      CHECK(fn == row.false_negatives);
      CHECK(row.fpr == double(fp) / double(row.num_benign));
      CHECK(row.fnr == double(fn) / double(row.num_malicious));
    }
    CHECK(evaluated == 3 * 3 * 5);

    const auto again = grid_search(train, valid, Modality::kVis, g, 0.01, 4);
    CHECK(format_grid_table(again) == format_grid_table(r));
    CHECK(format_grid_jsonl(again) == format_grid_jsonl(r));
    CHECK(again.winners == r.winners);

    // The winner is feasible and no feasible row is preferred to it.
    REQUIRE(r.winners.count(Modality::kVis));
    const auto& w = r.winners.at(Modality::kVis);
    const GridRow* wr = nullptr;
    for (const auto& row : r.rows)
      if (row.k == w.k && row.c == w.c && row.range == w.layers) wr = &row;
    REQUIRE(wr);
    CHECK(wr->feasible);
    for (const auto& row : r.rows)
      if (row.feasible && &row != wr) CHECK(!preferred(row, *wr));
  }

  TEST_CASE("grid requires both classes in validation") {
    std::mt19937_64 rng(46);
    const auto train = separable_bundle(rng, 60, 4, 5, 3.0);
    const auto valid = select_rows(separable_bundle(rng, 60, 4, 5, 3.0),
                                   [](const SampleRecord& s) { return s.label == Label::kBenign; });
    const GridSpec g{{3}, {std::nullopt}, {{0, 3}}};
    CHECK(error_code_of([&] { grid_search(train, valid, Modality::kText, g, 0.001); }) == ErrorCode::kMissingClass);
  }

  TEST_CASE("report formats") {
    std::mt19937_64 rng(47);
    const auto train = separable_bundle(rng, 80, 4, 5, 6.0);
    const auto valid = separable_bundle(rng, 60, 4, 5, 6.0);
    const GridSpec g{{3, 5}, {2, std::nullopt}, {{0, 1}, {1, 2}}};
    const auto r = grid_search(train, valid, Modality::kText, g, 0.001);
    const auto table = format_grid_table(r);
    CHECK(table.find("mean FNR by k") != std::string::npos);
    CHECK(table.find("mean FNR by c") != std::string::npos);
    CHECK(table.find("winner text") != std::string::npos);
    const auto jsonl = format_grid_jsonl(r);
    std::size_t lines = 0;
    for (char ch : jsonl) lines += ch == '\n';
    CHECK(lines >= r.rows.size());
  }
}
