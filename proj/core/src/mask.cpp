#include "wiper/mask.hpp"

#include <algorithm>

#include "wiper/error.hpp"

namespace wiper {

std::string_view to_string(Resolution r) {
  switch (r) {
    case Resolution::kPixel: return "pixel";
    case Resolution::kLatent: return "latent";
    case Resolution::kToken: return "token";
  }
  return "unknown";
}

Resolution resolution_from_string(std::string_view s) {
  if (s == "pixel") return Resolution::kPixel;
  if (s == "latent") return Resolution::kLatent;
  if (s == "token") return Resolution::kToken;
  throw InvalidParam("unknown mask resolution '" + std::string(s) + "'");
}

std::size_t grouped_frame(std::size_t f, std::size_t group) noexcept {
  return f == 0 ? 0 : 1 + (f - 1) / group;
}

namespace {

std::size_t expected_rank(Resolution r) { return r == Resolution::kLatent ? 4 : 3; }

void require_same_grid(const MaskGrid& a, const MaskGrid& b) {
  if (a.resolution() != b.resolution() || a.shape() != b.shape()) {
    throw ShapeMismatch("mask grids differ: " + std::string(to_string(a.resolution())) +
                        shape_to_string(a.shape()) + " vs " + std::string(to_string(b.resolution())) +
                        shape_to_string(b.shape()));
  }
}

void require_resolution(const MaskGrid& m, Resolution r) {
  if (m.resolution() != r) {
    throw ShapeMismatch("expected a " + std::string(to_string(r)) + " mask, got " +
                        std::string(to_string(m.resolution())));
  }
}

// Pooled [frames, H, W] grid shape for a pixel mask; throws on indivisible dims.
Shape pooled_shape(const Shape& pixel, PatchSize patch) {
  const std::size_t frames = pixel[0], h = pixel[1], w = pixel[2];
  if (patch.frames == 0 || patch.height == 0 || patch.width == 0) throw InvalidParam("patch sizes must be >= 1");
  if ((frames - 1) % patch.frames != 0 || h % patch.height != 0 || w % patch.width != 0) {
    throw ShapeMismatch("pixel mask " + shape_to_string(pixel) + " not divisible by patch (" +
                        std::to_string(patch.frames) + "," + std::to_string(patch.height) + "," +
                        std::to_string(patch.width) + ")");
  }
  return {1 + (frames - 1) / patch.frames, h / patch.height, w / patch.width};
}

std::vector<std::uint8_t> max_pool(const MaskGrid& pixel, PatchSize patch, const Shape& out) {
  const std::size_t h = pixel.shape()[1], w = pixel.shape()[2];
  std::vector<std::uint8_t> pooled(out[0] * out[1] * out[2], 0);
  for (std::size_t f = 0; f < pixel.shape()[0]; ++f) {
    const std::size_t tf = grouped_frame(f, patch.frames);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (pixel[(f * h + y) * w + x]) {
          pooled[(tf * out[1] + y / patch.height) * out[2] + x / patch.width] = 1;
        }
      }
    }
  }
  return pooled;
}

}  // namespace

MaskGrid::MaskGrid(Resolution resolution, Shape shape, std::vector<std::uint8_t> values)
    : resolution_(resolution), shape_(std::move(shape)), values_(std::move(values)) {
  if (shape_.size() != expected_rank(resolution_)) {
    throw ShapeMismatch(std::string(to_string(resolution_)) + " mask must have rank " +
                        std::to_string(expected_rank(resolution_)) + ", got " + shape_to_string(shape_));
  }
  if (checked_element_count(shape_) != values_.size()) throw ShapeMismatch("mask value count does not match shape");
  for (std::uint8_t v : values_) {
    if (v > 1) throw InvalidParam("mask values must be 0 or 1");
  }
}

MaskGrid MaskGrid::zeros(Resolution resolution, Shape shape) {
  const std::size_t n = checked_element_count(shape);
  return MaskGrid(resolution, std::move(shape), std::vector<std::uint8_t>(n, 0));
}

MaskGrid MaskGrid::ones(Resolution resolution, Shape shape) {
  const std::size_t n = checked_element_count(shape);
  return MaskGrid(resolution, std::move(shape), std::vector<std::uint8_t>(n, 1));
}

MaskGrid MaskGrid::from_tensor(Resolution resolution, const Tensor& t) {
  std::vector<std::uint8_t> v(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] == 0.0f) {
      v[i] = 0;
    } else if (t[i] == 1.0f) {
      v[i] = 1;
    } else {
      throw InvalidParam("mask value " + std::to_string(t[i]) + " at index " + std::to_string(i) +
                         " is not binary");
    }
  }
  return MaskGrid(resolution, t.shape(), std::move(v));
}

Tensor MaskGrid::to_tensor() const {
  std::vector<float> data(values_.begin(), values_.end());
  return Tensor(shape_, std::move(data));
}

std::size_t MaskGrid::count() const noexcept {
  return static_cast<std::size_t>(std::count(values_.begin(), values_.end(), std::uint8_t{1}));
}

MaskGrid to_token(const MaskGrid& pixel, PatchSize patch) {
  require_resolution(pixel, Resolution::kPixel);
  Shape out = pooled_shape(pixel.shape(), patch);
  auto pooled = max_pool(pixel, patch, out);
  return MaskGrid(Resolution::kToken, std::move(out), std::move(pooled));
}

MaskGrid to_latent(const MaskGrid& pixel, std::size_t channels, PatchSize patch) {
  require_resolution(pixel, Resolution::kPixel);
  if (channels == 0) throw InvalidParam("latent channel count must be >= 1");
  const Shape grid = pooled_shape(pixel.shape(), patch);
  const auto pooled = max_pool(pixel, patch, grid);
  std::vector<std::uint8_t> values;
  values.reserve(channels * pooled.size());
  for (std::size_t c = 0; c < channels; ++c) values.insert(values.end(), pooled.begin(), pooled.end());
  return MaskGrid(Resolution::kLatent, {channels, grid[0], grid[1], grid[2]}, std::move(values));
}

MaskGrid to_pixel(const MaskGrid& token, PatchSize patch) {
  require_resolution(token, Resolution::kToken);
  const std::size_t tf = token.shape()[0], th = token.shape()[1], tw = token.shape()[2];
  const std::size_t frames = 1 + (tf - 1) * patch.frames;
  const std::size_t h = th * patch.height, w = tw * patch.width;
  std::vector<std::uint8_t> values(frames * h * w);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t g = grouped_frame(f, patch.frames);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        values[(f * h + y) * w + x] = token[(g * th + y / patch.height) * tw + x / patch.width] ? 1 : 0;
  }
  return MaskGrid(Resolution::kPixel, {frames, h, w}, std::move(values));
}

MaskGrid token_to_latent(const MaskGrid& token, std::size_t channels, std::size_t spatial) {
  require_resolution(token, Resolution::kToken);
  if (channels == 0 || spatial == 0) throw InvalidParam("channels and spatial factor must be >= 1");
  const std::size_t tf = token.shape()[0], th = token.shape()[1], tw = token.shape()[2];
  const std::size_t h = th * spatial, w = tw * spatial;
  std::vector<std::uint8_t> values(channels * tf * h * w);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t f = 0; f < tf; ++f)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          values[((c * tf + f) * h + y) * w + x] = token[(f * th + y / spatial) * tw + x / spatial] ? 1 : 0;
  return MaskGrid(Resolution::kLatent, {channels, tf, h, w}, std::move(values));
}

MaskGrid mask_union(const MaskGrid& a, const MaskGrid& b) {
  require_same_grid(a, b);
  std::vector<std::uint8_t> v(a.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (a[i] || b[i]) ? 1 : 0;
  return MaskGrid(a.resolution(), a.shape(), std::move(v));
}

MaskGrid mask_complement(const MaskGrid& m) {
  std::vector<std::uint8_t> v(m.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = m[i] ? 0 : 1;
  return MaskGrid(m.resolution(), m.shape(), std::move(v));
}

bool is_subset(const MaskGrid& a, const MaskGrid& b) {
  require_same_grid(a, b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] && !b[i]) return false;
  }
  return true;
}

}  // namespace wiper
