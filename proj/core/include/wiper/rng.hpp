#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "wiper/tensor.hpp"

namespace wiper {

/// SplitMix64 stream with Box-Muller normals.
///
/// The n-th 64-bit output is mix(seed + (n + 1) * 0x9e3779b97f4a7c15), so the
/// stream is a pure function of (seed, counter) and identical on every platform.
/// Uniforms take the top 53 bits. Normals are produced in pairs
/// (cos branch first, then sin branch) from two consecutive uniforms.
class SeededRng {
 public:
  static constexpr std::string_view kAlgorithm = "splitmix64/box-muller";

  explicit SeededRng(std::uint64_t seed) noexcept : seed_(seed), state_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1).
  double next_uniform() noexcept;
  /// Standard normal.
  double next_normal() noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t state_;
  std::optional<double> spare_normal_;
};

/// i.i.d. standard-normal tensor. Throws InvalidShape on an empty shape or zero dimension.
Tensor gaussian(SeededRng& rng, const Shape& shape);

}  // namespace wiper
