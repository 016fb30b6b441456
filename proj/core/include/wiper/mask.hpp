#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wiper/tensor.hpp"

namespace wiper {

/// Which grid a mask lives on.
///   Pixel  [F+1, H, W]
///   Latent [C, F/g+1, H/s, W/s]
///   Token  [F/g+1, H/p, W/p]
enum class Resolution : std::uint8_t { kPixel, kLatent, kToken };

std::string_view to_string(Resolution r);
Resolution resolution_from_string(std::string_view s);

/// Pooling window from pixels to a coarser grid. Frame 0 maps alone and the
/// remaining frames map in groups of `frames` (causal video VAE layout).
struct PatchSize {
  std::size_t frames = 4;
  std::size_t height = 16;
  std::size_t width = 16;
};

inline constexpr PatchSize kTokenPatch{4, 16, 16};
inline constexpr PatchSize kLatentPatch{4, 8, 8};

/// Coarse frame index of pixel frame f.
std::size_t grouped_frame(std::size_t f, std::size_t group) noexcept;

/// Strictly binary mask with an explicit resolution tag.
class MaskGrid {
 public:
  MaskGrid() = default;
  MaskGrid(Resolution resolution, Shape shape, std::vector<std::uint8_t> values);

  static MaskGrid zeros(Resolution resolution, Shape shape);
  static MaskGrid ones(Resolution resolution, Shape shape);
  /// Throws InvalidParam unless every value is exactly 0 or 1.
  static MaskGrid from_tensor(Resolution resolution, const Tensor& t);

  Tensor to_tensor() const;

  Resolution resolution() const noexcept { return resolution_; }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<const std::uint8_t> values() const noexcept { return values_; }

  bool operator[](std::size_t i) const { return values_[i] != 0; }
  void set(std::size_t i, bool v) { values_[i] = v ? 1 : 0; }

  std::size_t count() const noexcept;
  bool any() const noexcept { return count() != 0; }

  friend bool operator==(const MaskGrid&, const MaskGrid&) = default;

 private:
  Resolution resolution_ = Resolution::kToken;
  Shape shape_;
  std::vector<std::uint8_t> values_;
};

/// Max-pool a pixel mask onto the token grid. Throws ShapeMismatch on indivisible dims.
MaskGrid to_token(const MaskGrid& pixel, PatchSize patch = kTokenPatch);

/// Max-pool a pixel mask onto the latent grid, then repeat across `channels`.
MaskGrid to_latent(const MaskGrid& pixel, std::size_t channels, PatchSize patch = kLatentPatch);

/// Nearest-neighbour upsample of a token mask to pixels.
MaskGrid to_pixel(const MaskGrid& token, PatchSize patch = kTokenPatch);

/// Nearest-neighbour upsample of a token mask to the latent grid (`spatial` latent cells
/// per token side, no temporal expansion), repeated across `channels`.
MaskGrid token_to_latent(const MaskGrid& token, std::size_t channels, std::size_t spatial = 2);

/// Elementwise OR. Named to avoid the `union` keyword.
MaskGrid mask_union(const MaskGrid& a, const MaskGrid& b);
MaskGrid mask_complement(const MaskGrid& m);
/// a ⊆ b. Throws ShapeMismatch on differing grids.
bool is_subset(const MaskGrid& a, const MaskGrid& b);

}  // namespace wiper
