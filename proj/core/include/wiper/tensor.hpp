#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace wiper {

using Shape = std::vector<std::size_t>;

/// Product of all dimensions. Throws InvalidShape for an empty shape or a zero dimension.
std::size_t checked_element_count(const Shape& shape);

std::string shape_to_string(const Shape& shape);

/// Dense row-major float tensor. Every dimension is at least 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  /// Flat offset of a multi-index, bounds-checked.
  std::size_t offset(std::initializer_list<std::size_t> index) const;
  float& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
  float at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

  /// Same data under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  /// Index of the first non-finite value, or size() if all are finite.
  std::size_t first_non_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Bitwise equality of shapes and payloads (distinguishes -0.0f and NaN payloads).
bool bit_equal(const Tensor& a, const Tensor& b) noexcept;

double max_abs(const Tensor& t) noexcept;
double frobenius_norm(const Tensor& t) noexcept;
/// ||a - b||_F. Shapes must match.
double frobenius_distance(const Tensor& a, const Tensor& b);

/// 64-bit FNV-1a over the little-endian shape and payload bytes, as 16 hex digits.
std::string content_hash(const Tensor& t);

}  // namespace wiper
