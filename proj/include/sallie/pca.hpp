#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "sallie/matrix.hpp"

namespace sallie {

/// A fitted principal-component projection. Parameters are held in float32 so that a
/// model loaded from disk projects bit-identically to the one that was fitted.
struct PcaModel {
  std::vector<float> mean;                // d
  Matrix components;                      // c x d, rows orthonormal
  std::vector<float> explained_variance;  // c, non-increasing

  std::size_t input_dim() const { return mean.size(); }
  std::size_t num_components() const { return components.rows(); }

  bool operator==(const PcaModel&) const = default;
};

/// Full eigen-decomposition of one data matrix's covariance. Fitting every c from the same
/// decomposition is what lets the grid search share work across c values while producing
/// models identical to a direct fit_pca call.
class PcaDecomposition {
 public:
  explicit PcaDecomposition(const Matrix& data);

  std::size_t num_samples() const { return num_samples_; }
  std::size_t dim() const { return mean_.size(); }
  /// Number of eigenvalues above the numerical-rank tolerance.
  std::size_t rank() const { return rank_; }

  /// Top-c components with the sign convention applied. Throws kInvalidArgument when
  /// c is outside [1, min(N-1, d)] and kRankDeficient when c exceeds rank().
  PcaModel truncate(std::size_t c) const;

 private:
  std::size_t num_samples_ = 0;
  std::size_t rank_ = 0;
  std::vector<double> mean_;
  std::vector<double> eigenvalues_;                // descending
  std::vector<std::vector<double>> eigenvectors_;  // matching eigenvalues_, sign-normalized
};

PcaModel fit_pca(const Matrix& data, std::size_t c);

/// components * (x - mean), accumulated in double.
std::vector<double> transform(const PcaModel& model, std::span<const float> x);

/// transform() when a model is present, otherwise x widened to double.
std::vector<double> maybe_project(const PcaModel* model, std::span<const float> x);
inline std::vector<double> maybe_project(const std::optional<PcaModel>& model, std::span<const float> x) {
  return maybe_project(model ? &*model : nullptr, x);
}

}  // namespace sallie
