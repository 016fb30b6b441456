#include "wiper/matrix.hpp"

#include <algorithm>
#include <string>

#include "wiper/error.hpp"

namespace wiper {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeMismatch("matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) + " given " +
                        std::to_string(data_.size()) + " values");
  }
}

Matrix Matrix::from_tensor(const Tensor& t) {
  if (t.rank() == 2) {
    return Matrix(t.dim(0), t.dim(1), t.values());
  }
  if (t.rank() == 3) {
    const std::size_t heads = t.dim(0), rows = t.dim(1), cols = t.dim(2);
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
      double s = 0.0;
      for (std::size_t h = 0; h < heads; ++h) s += t[h * rows * cols + i];
      m.data()[i] = static_cast<float>(s / static_cast<double>(heads));
    }
    return m;
  }
  throw ShapeMismatch("expected a rank-2 matrix or rank-3 per-head stack, got " + shape_to_string(t.shape()));
}

Tensor Matrix::to_tensor() const {
  return Tensor({rows_, cols_}, data_);
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("matmul inner dimensions differ: " + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()));
  }
  Matrix out(a.rows(), b.cols());
  std::vector<double> acc(b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    const auto arow = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      const auto brow = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) acc[j] += aik * brow[j];
    }
    auto orow = out.row(i);
    for (std::size_t j = 0; j < b.cols(); ++j) orow[j] = static_cast<float>(acc[j]);
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
  return t;
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= m.rows()) throw InvalidParam("row index " + std::to_string(rows[i]) + " out of range");
    const auto src = m.row(rows[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

Matrix vstack(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeMismatch("vstack column counts differ");
  Matrix out(a.rows() + b.rows(), a.cols());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(a.data().size()));
  return out;
}

}  // namespace wiper
