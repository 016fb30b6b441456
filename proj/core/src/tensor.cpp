#include "wiper/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <utility>

#include "wiper/error.hpp"

namespace wiper {

std::size_t checked_element_count(const Shape& shape) {
  if (shape.empty()) throw InvalidShape("tensor shape must have at least one dimension");
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw InvalidShape("zero dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(checked_element_count(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (checked_element_count(shape_) != data_.size()) {
    throw ShapeMismatch("shape " + shape_to_string(shape_) + " does not match " +
                        std::to_string(data_.size()) + " values");
  }
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) throw ShapeMismatch("index rank does not match tensor rank");
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) throw InvalidParam("index out of range on axis " + std::to_string(axis));
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(std::move(shape), data_);
}

std::size_t Tensor::first_non_finite() const noexcept {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) return i;
  }
  return data_.size();
}

bool bit_equal(const Tensor& a, const Tensor& b) noexcept {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(float)) == 0;
}

double max_abs(const Tensor& t) noexcept {
  double m = 0.0;
  for (float v : t.data()) m = std::max(m, std::fabs(static_cast<double>(v)));
  return m;
}

double frobenius_norm(const Tensor& t) noexcept {
  double s = 0.0;
  for (float v : t.data()) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

double frobenius_distance(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("cannot compare " + shape_to_string(a.shape()) + " with " +
                        shape_to_string(b.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv_u32(std::uint64_t& h, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    h ^= (v >> (8 * i)) & 0xffu;
    h *= kFnvPrime;
  }
}

}  // namespace

std::string content_hash(const Tensor& t) {
  std::uint64_t h = kFnvOffset;
  fnv_u32(h, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) fnv_u32(h, static_cast<std::uint32_t>(d));
  for (float v : t.data()) fnv_u32(h, std::bit_cast<std::uint32_t>(v));
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace wiper
