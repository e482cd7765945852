#include "sallie/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sallie/error.hpp"

namespace sallie {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    fail(ErrorCode::kDimensionMismatch,
         "matrix storage holds " + std::to_string(data_.size()) + " values, expected " +
             std::to_string(rows_) + " x " + std::to_string(cols_));
  }
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::size_t Matrix::first_non_finite() const {
  auto it = std::find_if(data_.begin(), data_.end(), [](float v) { return !std::isfinite(v); });
  return static_cast<std::size_t>(it - data_.begin());
}

}  // namespace sallie
