#include "sallie/knn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <thread>

#include "sallie/error.hpp"

namespace sallie {

namespace {

// The similarity kernel computes an 8-query x 3-reference tile. Each dot product is
// accumulated in eight float lanes over the padded dimension, then reduced in a fixed
// order. Every similarity in the library goes through this function, including single
// queries (padded into a tile), which is what makes blocking and threading unobservable.
using Lanes = float __attribute__((vector_size(32)));
constexpr std::size_t kLanes = 8;
constexpr std::size_t kQueryTile = 8;
constexpr std::size_t kRefTile = 3;
constexpr std::size_t kTilesPerBlock = 32;          // 256 queries share one pass over a reference block
constexpr std::size_t kRefBlock = kRefTile * 128;  // 384 reference rows per block

std::size_t round_up(std::size_t n, std::size_t m) { return (n + m - 1) / m * m; }

using LaneIndex = std::int32_t __attribute__((vector_size(32)));

// Reduces eight accumulators at once. Each sum is ((v0+v4)+(v1+v5))+((v2+v6)+(v3+v7)), the
// same association for every accumulator, returned in accumulator order.
inline Lanes reduce8(const Lanes (&v)[8]) {
  auto halves = [](Lanes x, Lanes y) {
    return __builtin_shuffle(x, y, LaneIndex{0, 1, 2, 3, 8, 9, 10, 11}) +
           __builtin_shuffle(x, y, LaneIndex{4, 5, 6, 7, 12, 13, 14, 15});
  };
  auto hadd = [](Lanes x, Lanes y) {
    return __builtin_shuffle(x, y, LaneIndex{0, 2, 8, 10, 4, 6, 12, 14}) +
           __builtin_shuffle(x, y, LaneIndex{1, 3, 9, 11, 5, 7, 13, 15});
  };
  const Lanes s01 = halves(v[0], v[1]), s23 = halves(v[2], v[3]);
  const Lanes s45 = halves(v[4], v[5]), s67 = halves(v[6], v[7]);
  const Lanes r = hadd(hadd(s01, s23), hadd(s45, s67));  // order 0,2,4,6,1,3,5,7
  return __builtin_shuffle(r, LaneIndex{0, 4, 1, 5, 2, 6, 3, 7});
}

using UnalignedLanes = float __attribute__((vector_size(32), aligned(4), may_alias));

inline Lanes load(const float* p) { return *reinterpret_cast<const UnalignedLanes*>(p); }

// out[b * kQueryTile + a] = similarity of query a and reference b.
void dot_tile(const float* __restrict q, const float* __restrict r, std::size_t stride, float* __restrict out) {
  static_assert(kQueryTile == 8 && kRefTile == 3);
  Lanes acc[kRefTile][kQueryTile] = {};
  for (std::size_t i = 0; i < stride; i += kLanes) {
    const Lanes r0 = load(r + i), r1 = load(r + stride + i), r2 = load(r + 2 * stride + i);
#pragma GCC unroll 8
    for (std::size_t a = 0; a < kQueryTile; ++a) {
      const Lanes qv = load(q + a * stride + i);
      acc[0][a] += qv * r0;
      acc[1][a] += qv * r1;
      acc[2][a] += qv * r2;
    }
  }
  for (std::size_t b = 0; b < kRefTile; ++b) {
    const Lanes sums = reduce8(acc[b]);
    std::memcpy(out + b * kQueryTile, &sums, sizeof sums);
  }
}

// Sorted by (similarity desc, index asc). Candidates arrive in increasing index order, so an
// equal similarity never displaces an existing entry.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k), sims_(k), ids_(k) {}

  void reset() { count_ = 0; }

  void push(float sim, std::uint32_t id) {
    if (count_ == k_) {
      if (!(sim > sims_[k_ - 1])) return;
    } else {
      ++count_;
    }
    std::size_t pos = count_ - 1;
    while (pos > 0 && sims_[pos - 1] < sim) {
      sims_[pos] = sims_[pos - 1];
      ids_[pos] = ids_[pos - 1];
      --pos;
    }
    sims_[pos] = sim;
    ids_[pos] = id;
  }

  const std::uint32_t* ids() const { return ids_.data(); }
  /// Candidates at or below this value cannot enter.
  float cutoff() const { return count_ == k_ ? sims_[k_ - 1] : -INFINITY; }

 private:
  std::size_t k_;
  std::size_t count_ = 0;
  std::vector<float> sims_;
  std::vector<std::uint32_t> ids_;
};

void normalize_into(std::span<const double> q, float* dst, std::size_t row_hint, bool is_query) {
  double sq = 0.0;
  for (double v : q) {
    if (!std::isfinite(v)) {
      fail(ErrorCode::kNonFinite, std::string(is_query ? "query" : "reference row ") +
                                      (is_query ? "" : std::to_string(row_hint)) + " has a non-finite entry");
    }
    sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > 0.0)) {
    fail(ErrorCode::kZeroNorm, is_query ? std::string("query vector has zero norm")
                                        : "reference row " + std::to_string(row_hint) + " has zero norm");
  }
  for (std::size_t j = 0; j < q.size(); ++j) dst[j] = static_cast<float>(q[j] / norm);
}

}  // namespace

QuerySet::QuerySet(std::size_t dim) : dim_(dim), stride_(round_up(std::max<std::size_t>(dim, 1), kLanes)) {}

void QuerySet::add(std::span<const double> query) {
  if (query.size() != dim_) {
    fail(ErrorCode::kDimensionMismatch,
         "query has dimension " + std::to_string(query.size()) + ", index expects " + std::to_string(dim_));
  }
  values_.resize((count_ + 1) * stride_, 0.0f);
  normalize_into(query, values_.data() + count_ * stride_, count_, true);
  ++count_;
}

void QuerySet::add(std::span<const float> query) {
  std::vector<double> wide(query.begin(), query.end());
  add(std::span<const double>(wide));
}

ProbeIndex ProbeIndex::build(std::span<const double> points, std::size_t dim, std::vector<std::uint8_t> labels,
                             int layer_id) {
  if (dim == 0) fail(ErrorCode::kInvalidArgument, "probe vectors must have positive dimension");
  if (points.size() % dim != 0) fail(ErrorCode::kDimensionMismatch, "point buffer is not a whole number of rows");
  const std::size_t m = points.size() / dim;
  if (m == 0) fail(ErrorCode::kInvalidArgument, "probe index needs at least one reference vector");
  if (labels.size() != m) {
    fail(ErrorCode::kDimensionMismatch,
         std::to_string(labels.size()) + " labels for " + std::to_string(m) + " reference vectors");
  }
  for (auto l : labels) {
    if (l > 1) fail(ErrorCode::kInvalidArgument, "labels must be 0 or 1");
  }
  ProbeIndex idx;
  idx.layer_id_ = layer_id;
  idx.dim_ = dim;
  idx.stride_ = round_up(dim, kLanes);
  idx.vectors_.assign(round_up(m, kRefTile) * idx.stride_, 0.0f);
  idx.source_norms_.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto row = points.subspan(i * dim, dim);
    normalize_into(row, idx.vectors_.data() + i * idx.stride_, i, false);
    double sq = 0.0;
    for (double v : row) sq += v * v;
    idx.source_norms_[i] = static_cast<float>(std::sqrt(sq));
  }
  idx.labels_ = std::move(labels);
  return idx;
}

ProbeIndex ProbeIndex::build(const Matrix& points, std::vector<std::uint8_t> labels, int layer_id) {
  std::vector<double> wide(points.data().begin(), points.data().end());
  return build(wide, points.cols(), std::move(labels), layer_id);
}

ProbeIndex ProbeIndex::from_normalized(int layer_id, std::size_t dim, std::span<const float> vectors,
                                       std::vector<std::uint8_t> labels, std::vector<float> source_norms) {
  const std::size_t m = labels.size();
  if (dim == 0 || m == 0 || vectors.size() != m * dim || source_norms.size() != m) {
    fail(ErrorCode::kCorrupt, "probe index payload has inconsistent sizes");
  }
  ProbeIndex idx;
  idx.layer_id_ = layer_id;
  idx.dim_ = dim;
  idx.stride_ = round_up(dim, kLanes);
  idx.vectors_.assign(round_up(m, kRefTile) * idx.stride_, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(vectors.data() + i * dim, dim, idx.vectors_.data() + i * idx.stride_);
    if (labels[i] > 1) fail(ErrorCode::kCorrupt, "probe index label out of range");
  }
  idx.labels_ = std::move(labels);
  idx.source_norms_ = std::move(source_norms);
  return idx;
}

bool ProbeIndex::operator==(const ProbeIndex& other) const {
  return layer_id_ == other.layer_id_ && dim_ == other.dim_ && labels_ == other.labels_ &&
         source_norms_ == other.source_norms_ && vectors_ == other.vectors_;
}

std::vector<float> ProbeIndex::similarities(const QuerySet& queries, std::size_t query) const {
  if (queries.dim() != dim_) fail(ErrorCode::kDimensionMismatch, "query set dimension differs from index");
  std::vector<float> tile(kQueryTile * stride_, 0.0f);
  std::copy_n(queries.data() + query * stride_, stride_, tile.data());
  std::vector<float> out(size());
  float buf[kQueryTile * kRefTile];
  const std::size_t padded_rows = vectors_.size() / stride_;
  for (std::size_t r = 0; r < padded_rows; r += kRefTile) {
    dot_tile(tile.data(), vectors_.data() + r * stride_, stride_, buf);
    for (std::size_t b = 0; b < kRefTile && r + b < size(); ++b) out[r + b] = buf[b * kQueryTile];
  }
  return out;
}

std::vector<std::uint32_t> ProbeIndex::nearest(const QuerySet& queries, std::size_t k, std::size_t workers) const {
  if (queries.dim() != dim_) {
    fail(ErrorCode::kDimensionMismatch, "queries have dimension " + std::to_string(queries.dim()) +
                                            ", index expects " + std::to_string(dim_));
  }
  if (k == 0 || k > size()) {
    fail(ErrorCode::kInvalidArgument,
         "k=" + std::to_string(k) + " must be in [1, " + std::to_string(size()) + "] (reference set size)");
  }
  const std::size_t nq = queries.size();
  std::vector<std::uint32_t> result(nq * k);
  if (nq == 0) return result;

  const std::size_t num_tiles = (nq + kQueryTile - 1) / kQueryTile;
  const std::size_t m = size();
  const std::size_t padded_rows = vectors_.size() / stride_;
  const std::size_t block_queries = kTilesPerBlock * kQueryTile;

  auto run = [&](std::size_t tile_begin, std::size_t tile_end) {
    std::vector<float> qbuf(block_queries * stride_);
    std::vector<TopK> tops(block_queries, TopK(k));
    float out[kQueryTile * kRefTile];
    for (std::size_t t0 = tile_begin; t0 < tile_end; t0 += kTilesPerBlock) {
      const std::size_t tiles = std::min(kTilesPerBlock, tile_end - t0);
      const std::size_t q0 = t0 * kQueryTile;
      const std::size_t live = std::min(tiles * kQueryTile, nq - q0);
      std::fill(qbuf.begin(), qbuf.end(), 0.0f);
      std::copy_n(queries.data() + q0 * stride_, live * stride_, qbuf.data());
      for (std::size_t q = 0; q < live; ++q) tops[q].reset();

      // Each query sees reference rows in increasing order, which the TopK tie rule relies on.
      for (std::size_t r0 = 0; r0 < padded_rows; r0 += kRefBlock) {
        const std::size_t rows = std::min(kRefBlock, padded_rows - r0);
        for (std::size_t t = 0; t < tiles; ++t) {
          const float* qt = qbuf.data() + t * kQueryTile * stride_;
          const std::size_t tile_live = std::min(kQueryTile, live - std::min(live, t * kQueryTile));
          float cut[kQueryTile];
          for (std::size_t a = 0; a < tile_live; ++a) cut[a] = tops[t * kQueryTile + a].cutoff();
          for (std::size_t r = 0; r < rows; r += kRefTile) {
            dot_tile(qt, vectors_.data() + (r0 + r) * stride_, stride_, out);
            const std::size_t real = std::min(kRefTile, m - std::min(m, r0 + r));
            for (std::size_t a = 0; a < tile_live; ++a) {
              for (std::size_t b = 0; b < real; ++b) {
                if (out[b * kQueryTile + a] > cut[a]) {
                  auto& top = tops[t * kQueryTile + a];
                  top.push(out[b * kQueryTile + a], static_cast<std::uint32_t>(r0 + r + b));
                  cut[a] = top.cutoff();
                }
              }
            }
          }
        }
      }
      for (std::size_t q = 0; q < live; ++q) std::copy_n(tops[q].ids(), k, result.data() + (q0 + q) * k);
    }
  };

  const std::size_t nworkers = std::clamp<std::size_t>(workers, 1, num_tiles);
  if (nworkers == 1) {
    run(0, num_tiles);
  } else {
    std::vector<std::jthread> threads;
    const std::size_t per = (num_tiles + nworkers - 1) / nworkers;
    for (std::size_t w = 0; w < nworkers; ++w) {
      const std::size_t begin = w * per;
      const std::size_t end = std::min(num_tiles, begin + per);
      if (begin < end) threads.emplace_back(run, begin, end);
    }
  }
  return result;
}

double score(const ProbeIndex& index, std::span<const double> query, std::size_t k) {
  QuerySet qs(index.dim());
  qs.add(query);
  return score_batch(index, qs, k).front();
}

double score(const ProbeIndex& index, std::span<const float> query, std::size_t k) {
  QuerySet qs(index.dim());
  qs.add(query);
  return score_batch(index, qs, k).front();
}

std::vector<double> score_batch(const ProbeIndex& index, const QuerySet& queries, std::size_t k,
                                std::size_t workers) {
  const auto ids = index.nearest(queries, k, workers);
  std::vector<double> out(queries.size());
  const auto& labels = index.labels();
  for (std::size_t q = 0; q < out.size(); ++q) {
    std::size_t hits = 0;
    for (std::size_t j = 0; j < k; ++j) hits += labels[ids[q * k + j]];
    out[q] = static_cast<double>(hits) / static_cast<double>(k);
  }
  return out;
}

std::vector<double> score_batch(const ProbeIndex& index, const Matrix& queries, std::size_t k, std::size_t workers) {
  QuerySet qs(index.dim());
  if (queries.rows() > 0 && queries.cols() != index.dim()) {
    fail(ErrorCode::kDimensionMismatch, "query matrix has " + std::to_string(queries.cols()) +
                                            " columns, index expects " + std::to_string(index.dim()));
  }
  for (std::size_t i = 0; i < queries.rows(); ++i) qs.add(queries.row(i));
  return score_batch(index, qs, k, workers);
}

std::vector<std::uint32_t> malicious_prefix_counts(const ProbeIndex& index, const QuerySet& queries,
                                                   std::size_t k_max, std::size_t workers) {
  const auto ids = index.nearest(queries, k_max, workers);
  const auto& labels = index.labels();
  std::vector<std::uint32_t> counts(ids.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::uint32_t running = 0;
    for (std::size_t j = 0; j < k_max; ++j) {
      running += labels[ids[q * k_max + j]];
      counts[q * k_max + j] = running;
    }
  }
  return counts;
}

}  // namespace sallie
