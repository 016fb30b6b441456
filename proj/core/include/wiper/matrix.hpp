#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wiper/tensor.hpp"

namespace wiper {

/// Row-major float matrix used for token features, projections and attention maps.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  /// Rank-2 tensor view; rank-3 [H, N, M] tensors are mean-reduced over H.
  static Matrix from_tensor(const Tensor& t);
  Tensor to_tensor() const;

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// a (n x k) * b (k x m). Each output accumulates in double over k in ascending order.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

/// Rows of m selected by index, in the given order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows);

/// Vertical concatenation [a; b]. Column counts must agree.
Matrix vstack(const Matrix& a, const Matrix& b);

}  // namespace wiper
