#pragma once

// Slow, independent reference implementations used only by the tests.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "sallie/bundle.hpp"
#include "sallie/matrix.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, rows of equal length

/// Cyclic Jacobi on a symmetric matrix. Eigenvalues descending, eigenvectors as rows.
std::pair<Vec, Mat> jacobi_eigen(Mat a);

/// Explicit covariance (N-1 denominator) of the rows of `data`.
Mat covariance(const sallie::Matrix& data, Vec* mean = nullptr);

/// Top-c principal axes (rows) with the largest-magnitude coordinate made positive.
Mat pca_axes(const sallie::Matrix& data, std::size_t c, Vec* mean = nullptr);

/// Projection of x onto the axes after centering.
Vec project(const Mat& axes, const Vec& mean, std::span<const float> x);

/// Indices of the k most similar references by cosine computed in double, found by sorting
/// every candidate (similarity descending, index ascending).
std::vector<std::size_t> knn_full_sort(const std::vector<Vec>& refs, const Vec& query, std::size_t k);
double knn_score(const std::vector<Vec>& refs, const std::vector<std::uint8_t>& labels, const Vec& query,
                 std::size_t k);

/// Counts by direct recount: benign with score >= t, malicious with score < t.
std::pair<std::size_t, std::size_t> recount(const std::vector<std::pair<double, sallie::Label>>& scores, double t);

struct Selection {
  double threshold;
  std::size_t fp, fn;
  bool feasible;
};

/// Scans every candidate threshold (distinct scores plus one above the maximum): minimal FN
/// subject to fp * den <= num * benign, ties to the larger threshold.
Selection exhaustive_select(const std::vector<std::pair<double, sallie::Label>>& scores, std::uint64_t cap_num,
                            std::uint64_t cap_den);

}  // namespace oracle
