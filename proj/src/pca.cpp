#include "sallie/pca.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "sallie/error.hpp"

namespace sallie {

namespace {

// Relative eigenvalue cutoff below which a direction counts as numerically absent.
constexpr double kRankTolerance = 1e-10;

}  // namespace

PcaDecomposition::PcaDecomposition(const Matrix& data) : num_samples_(data.rows()) {
  const std::size_t n = data.rows();
  const std::size_t d = data.cols();
  if (n < 2) fail(ErrorCode::kInvalidArgument, "PCA needs at least 2 samples, got " + std::to_string(n));
  if (auto bad = data.first_non_finite(); bad != data.data().size()) {
    fail(ErrorCode::kNonFinite, "PCA input row " + std::to_string(bad / d) + " is not finite");
  }

  mean_.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = data.row(i);
    for (std::size_t j = 0; j < d; ++j) mean_[j] += row[j];
  }
  for (auto& m : mean_) m /= static_cast<double>(n);

  // Accumulate the scatter matrix in row blocks so peak memory stays O(block * d + d^2).
  constexpr std::size_t kBlock = 1024;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t start = 0; start < n; start += kBlock) {
    const std::size_t rows = std::min(kBlock, n - start);
    Eigen::MatrixXd centered(rows, d);
    for (std::size_t i = 0; i < rows; ++i) {
      auto row = data.row(start + i);
      for (std::size_t j = 0; j < d; ++j) centered(i, j) = static_cast<double>(row[j]) - mean_[j];
    }
    cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) fail(ErrorCode::kNonConvergence, "covariance eigen-decomposition failed");

  // The solver reports ascending eigenvalues; walk them in reverse for descending order.
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  eigenvalues_.reserve(d);
  eigenvectors_.reserve(d);
  for (std::size_t r = 0; r < d; ++r) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - r);
    eigenvalues_.push_back(std::max(values(col), 0.0));
    std::vector<double> v(d);
    std::size_t argmax = 0;
    for (std::size_t j = 0; j < d; ++j) {
      v[j] = vectors(static_cast<Eigen::Index>(j), col);
      if (std::abs(v[j]) > std::abs(v[argmax])) argmax = j;
    }
    if (v[argmax] < 0) {
      for (auto& x : v) x = -x;
    }
    eigenvectors_.push_back(std::move(v));
  }
  const double top = eigenvalues_.empty() ? 0.0 : eigenvalues_.front();
  rank_ = static_cast<std::size_t>(std::count_if(eigenvalues_.begin(), eigenvalues_.end(),
                                                 [&](double ev) { return top > 0 && ev > top * kRankTolerance; }));
}

PcaModel PcaDecomposition::truncate(std::size_t c) const {
  const std::size_t d = dim();
  const std::size_t limit = std::min(num_samples_ - 1, d);
  if (c < 1 || c > limit) {
    fail(ErrorCode::kInvalidArgument, "PCA components c=" + std::to_string(c) + " outside [1, " +
                                          std::to_string(limit) + "] (N=" + std::to_string(num_samples_) +
                                          ", d=" + std::to_string(d) + ")");
  }
  if (c > rank_) {
    fail(ErrorCode::kRankDeficient, "PCA components c=" + std::to_string(c) + " exceed data rank; achievable rank is " +
                                        std::to_string(rank_));
  }
  PcaModel model;
  model.mean.assign(mean_.begin(), mean_.end());
  model.components = Matrix(c, d);
  model.explained_variance.resize(c);
  for (std::size_t r = 0; r < c; ++r) {
    for (std::size_t j = 0; j < d; ++j) model.components(r, j) = static_cast<float>(eigenvectors_[r][j]);
    model.explained_variance[r] = static_cast<float>(eigenvalues_[r]);
  }
  return model;
}

PcaModel fit_pca(const Matrix& data, std::size_t c) {
  if (data.rows() >= 2) {
    const std::size_t limit = std::min(data.rows() - 1, data.cols());
    if (c < 1 || c > limit) {
      fail(ErrorCode::kInvalidArgument, "PCA components c=" + std::to_string(c) + " outside [1, " +
                                            std::to_string(limit) + "]");
    }
  }
  return PcaDecomposition(data).truncate(c);
}

std::vector<double> transform(const PcaModel& model, std::span<const float> x) {
  const std::size_t d = model.input_dim();
  if (x.size() != d) {
    fail(ErrorCode::kDimensionMismatch,
         "PCA input has dimension " + std::to_string(x.size()) + ", model expects " + std::to_string(d));
  }
  std::vector<double> centered(d);
  for (std::size_t j = 0; j < d; ++j) centered[j] = static_cast<double>(x[j]) - static_cast<double>(model.mean[j]);
  std::vector<double> out(model.num_components(), 0.0);
  for (std::size_t r = 0; r < out.size(); ++r) {
    auto comp = model.components.row(r);
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += static_cast<double>(comp[j]) * centered[j];
    out[r] = acc;
  }
  return out;
}

std::vector<double> maybe_project(const PcaModel* model, std::span<const float> x) {
  if (model) return transform(*model, x);
  return {x.begin(), x.end()};
}

}  // namespace sallie
