#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "sallie/matrix.hpp"

namespace sallie {

/// Unit-normalized query vectors laid out for the similarity kernel.
class QuerySet {
 public:
  explicit QuerySet(std::size_t dim);

  /// Normalizes and appends one query. Throws kZeroNorm / kNonFinite / kDimensionMismatch.
  void add(std::span<const double> query);
  void add(std::span<const float> query);

  std::size_t size() const { return count_; }
  std::size_t dim() const { return dim_; }
  std::size_t stride() const { return stride_; }
  const float* data() const { return values_.data(); }

 private:
  std::size_t dim_;
  std::size_t stride_;
  std::size_t count_ = 0;
  std::vector<float> values_;
};

/// Exact cosine k-NN reference set for one layer. Stored vectors are unit-normalized float32;
/// similarity is the dot product computed by a single fixed-order kernel, so results do not
/// depend on batching or on the number of workers.
class ProbeIndex {
 public:
  ProbeIndex() = default;

  /// Normalizes each row of a row-major M x dim buffer. Throws kZeroNorm naming the row.
  static ProbeIndex build(std::span<const double> points, std::size_t dim, std::vector<std::uint8_t> labels,
                          int layer_id = 0);
  static ProbeIndex build(const Matrix& points, std::vector<std::uint8_t> labels, int layer_id = 0);

  /// Rehydrates an index whose vectors are already unit-normalized (deserialization path).
  static ProbeIndex from_normalized(int layer_id, std::size_t dim, std::span<const float> vectors,
                                    std::vector<std::uint8_t> labels, std::vector<float> source_norms);

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return dim_; }
  int layer_id() const { return layer_id_; }
  std::span<const float> vector(std::size_t i) const { return {vectors_.data() + i * stride_, dim_}; }
  const std::vector<std::uint8_t>& labels() const { return labels_; }
  const std::vector<float>& source_norms() const { return source_norms_; }

  /// Indices of the k most similar reference vectors per query, most similar first; equal
  /// similarities are ordered by lower row index. Returns a flat Q x k array.
  std::vector<std::uint32_t> nearest(const QuerySet& queries, std::size_t k, std::size_t workers = 1) const;

  /// Kernel similarities of one query against every reference vector, in row order.
  std::vector<float> similarities(const QuerySet& queries, std::size_t query) const;

  bool operator==(const ProbeIndex& other) const;

 private:
  int layer_id_ = 0;
  std::size_t dim_ = 0;
  std::size_t stride_ = 0;
  std::vector<float> vectors_;  // padded: rows rounded up to the reference tile, columns to stride_
  std::vector<std::uint8_t> labels_;
  std::vector<float> source_norms_;
};

/// Fraction of malicious labels among the k nearest references.
double score(const ProbeIndex& index, std::span<const double> query, std::size_t k);
double score(const ProbeIndex& index, std::span<const float> query, std::size_t k);

std::vector<double> score_batch(const ProbeIndex& index, const QuerySet& queries, std::size_t k,
                                std::size_t workers = 1);
std::vector<double> score_batch(const ProbeIndex& index, const Matrix& queries, std::size_t k,
                                std::size_t workers = 1);

/// counts[q * k_max + j] = malicious labels among the j+1 nearest neighbours of query q.
/// One neighbour search serves every k <= k_max.
std::vector<std::uint32_t> malicious_prefix_counts(const ProbeIndex& index, const QuerySet& queries,
                                                   std::size_t k_max, std::size_t workers = 1);

}  // namespace sallie
