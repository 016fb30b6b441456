#include "wiper/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "wiper/error.hpp"
#include "wiper/parallel.hpp"

namespace wiper {
namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  // sqrt(na * na) == na exactly, so identical vectors give exactly 1.
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

struct VideoLayout {
  std::size_t channels, frames, height, width;
};

VideoLayout video_layout(const Tensor& v) {
  if (v.rank() == 3) return {1, v.dim(0), v.dim(1), v.dim(2)};
  if (v.rank() == 4) return {v.dim(0), v.dim(1), v.dim(2), v.dim(3)};
  throw ShapeMismatch("pixel video must be [F, H, W] or [C, F, H, W], got " + shape_to_string(v.shape()));
}

void require_pixel_range(const Tensor& v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] < 0.0f || v[i] > 255.0f) {
      throw InvalidParam("pixel value " + std::to_string(v[i]) + " at index " + std::to_string(i) +
                         " outside [0, 255]");
    }
  }
}

void require_frame_mask(const MaskGrid& mask, const VideoLayout& l) {
  const Shape expected{l.frames, l.height, l.width};
  if (mask.shape() != expected) {
    throw ShapeMismatch("mask " + shape_to_string(mask.shape()) + " does not match video frames " +
                        shape_to_string(expected));
  }
}

struct PairAccumulator {
  TokSimPairStats stats;
  double term_sum = 0.0;
};

}  // namespace

EmbeddingVideo::EmbeddingVideo(Tensor embeddings, std::size_t patch_size)
    : embeddings_(std::move(embeddings)), patch_size_(patch_size) {
  if (embeddings_.rank() != 4) {
    throw ShapeMismatch("embedding video must be [F, H', W', D], got " + shape_to_string(embeddings_.shape()));
  }
  if (patch_size_ == 0) throw InvalidParam("patch size must be positive");
  const std::size_t d = dim();
  for (std::size_t t = 0; t < embeddings_.size() / d; ++t) {
    double n = 0.0;
    for (std::size_t i = 0; i < d; ++i) n += static_cast<double>(embeddings_[t * d + i]) * embeddings_[t * d + i];
    if (n == 0.0) throw InvalidParam("zero-norm embedding at token " + std::to_string(t));
  }
}

std::span<const float> EmbeddingVideo::token(std::size_t frame, std::size_t y, std::size_t x) const {
  const std::size_t d = dim();
  return embeddings_.data().subspan(((frame * height() + y) * width() + x) * d, d);
}

std::size_t neighbourhood_radius(std::size_t neighbourhood_px, std::size_t patch_size) {
  if (patch_size == 0) throw InvalidParam("patch size must be positive");
  return (neighbourhood_px + patch_size - 1) / patch_size;
}

TokSimReport toksim(const EmbeddingVideo& input, const EmbeddingVideo& output, const MaskGrid& masks,
                    std::size_t neighbourhood_px) {
  if (input.tensor().shape() != output.tensor().shape()) {
    throw ShapeMismatch("input and output embeddings differ in shape");
  }
  if (masks.shape() != output.grid()) {
    throw ShapeMismatch("mask " + shape_to_string(masks.shape()) + " does not match token grid " +
                        shape_to_string(output.grid()));
  }
  const std::size_t frames = output.frames(), h = output.height(), w = output.width();
  if (frames < 2) throw InvalidParam("TokSim needs at least two frames");
  const auto radius = static_cast<std::ptrdiff_t>(neighbourhood_radius(neighbourhood_px, output.patch_size()));
  const std::size_t per_frame = h * w;

  std::vector<PairAccumulator> acc(frames - 1);
  parallel_for(frames - 1, [&](std::size_t k) {
    PairAccumulator& a = acc[k];
    a.stats.frame = k;
    std::vector<std::uint8_t> in_union(per_frame);
    for (std::size_t i = 0; i < per_frame; ++i) {
      in_union[i] = (masks[k * per_frame + i] || masks[(k + 1) * per_frame + i]) ? 1 : 0;
    }
    double lambda_sum = 0.0, eta_sum = 0.0, tau_sum = 0.0;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (!in_union[y * w + x]) continue;
        const auto z = output.token(k, y, x);
        const double lambda = cosine(z, output.token(k + 1, y, x));
        const double eta = cosine(z, input.token(k, y, x));
        ++a.stats.object_tokens;
        lambda_sum += lambda;
        eta_sum += eta;

        double neighbour_sum = 0.0;
        std::size_t neighbours = 0;
        const auto yi = static_cast<std::ptrdiff_t>(y), xi = static_cast<std::ptrdiff_t>(x);
        for (std::ptrdiff_t ny = std::max<std::ptrdiff_t>(0, yi - radius);
             ny <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(h) - 1, yi + radius); ++ny) {
          for (std::ptrdiff_t nx = std::max<std::ptrdiff_t>(0, xi - radius);
               nx <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(w) - 1, xi + radius); ++nx) {
            const auto uy = static_cast<std::size_t>(ny), ux = static_cast<std::size_t>(nx);
            if (in_union[uy * w + ux]) continue;
            neighbour_sum += cosine(z, output.token(k, uy, ux));
            ++neighbours;
          }
        }
        if (neighbours == 0) continue;
        const double tau = neighbour_sum / static_cast<double>(neighbours);
        tau_sum += tau;
        ++a.stats.counted_tokens;
        a.term_sum += clamp01(lambda) * clamp01(1.0 - eta) * clamp01(tau);
      }
    }
    if (a.stats.object_tokens > 0) {
      a.stats.mean_lambda = lambda_sum / static_cast<double>(a.stats.object_tokens);
      a.stats.mean_eta = eta_sum / static_cast<double>(a.stats.object_tokens);
    }
    if (a.stats.counted_tokens > 0) a.stats.mean_tau = tau_sum / static_cast<double>(a.stats.counted_tokens);
  });

  TokSimReport report;
  double total = 0.0;
  std::size_t object_tokens = 0;
  for (const auto& a : acc) {
    total += a.term_sum;
    report.counted_terms += a.stats.counted_tokens;
    report.skipped_tokens += a.stats.object_tokens - a.stats.counted_tokens;
    object_tokens += a.stats.object_tokens;
    report.pairs.push_back(a.stats);
  }
  if (object_tokens == 0) throw MetricUndefined("object mask is empty in every frame");
  if (report.counted_terms == 0) throw MetricUndefined("no object token has a background neighbour in range");
  report.score = 100.0 * total / static_cast<double>(report.counted_terms);
  return report;
}

PsnrResult bg_psnr(const Tensor& input, const Tensor& output, const MaskGrid& mask) {
  if (input.shape() != output.shape()) throw ShapeMismatch("videos differ in shape");
  const VideoLayout l = video_layout(input);
  require_frame_mask(mask, l);
  require_pixel_range(input);
  require_pixel_range(output);

  const std::size_t plane = l.frames * l.height * l.width;
  double sse = 0.0;
  std::size_t count = 0;
  for (std::size_t c = 0; c < l.channels; ++c) {
    for (std::size_t i = 0; i < plane; ++i) {
      if (mask[i]) continue;
      const double d = static_cast<double>(input[c * plane + i]) - output[c * plane + i];
      sse += d * d;
      ++count;
    }
  }
  if (count == 0) throw MetricUndefined("mask covers every pixel; no background to compare");
  if (sse == 0.0) return PsnrResult{std::numeric_limits<double>::infinity(), true};
  const double mse = sse / static_cast<double>(count);
  return PsnrResult{10.0 * std::log10(255.0 * 255.0 / mse), false};
}

double fg_flicker(const Tensor& video, const MaskGrid& masks) {
  const VideoLayout l = video_layout(video);
  require_frame_mask(masks, l);
  require_pixel_range(video);
  if (l.frames < 2) throw InvalidParam("flicker needs at least two frames");

  const std::size_t frame_px = l.height * l.width, plane = l.frames * frame_px;
  double pair_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t k = 0; k + 1 < l.frames; ++k) {
    double diff = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < frame_px; ++i) {
      if (!masks[k * frame_px + i] && !masks[(k + 1) * frame_px + i]) continue;
      for (std::size_t c = 0; c < l.channels; ++c) {
        const std::size_t at = c * plane + k * frame_px + i;
        diff += std::fabs(static_cast<double>(video[at]) - video[at + frame_px]);
        ++count;
      }
    }
    if (count == 0) continue;
    pair_sum += diff / static_cast<double>(count);
    ++pairs;
  }
  if (pairs == 0) throw MetricUndefined("object masks are empty for every frame pair");
  return pair_sum / static_cast<double>(pairs);
}

MaskGrid pool_frame_masks(const MaskGrid& pixel_masks, std::size_t patch_size) {
  if (pixel_masks.resolution() != Resolution::kPixel) throw ShapeMismatch("expected a pixel mask");
  if (patch_size == 0) throw InvalidParam("patch size must be positive");
  const std::size_t f_n = pixel_masks.shape()[0], h = pixel_masks.shape()[1], w = pixel_masks.shape()[2];
  const std::size_t th = (h + patch_size - 1) / patch_size, tw = (w + patch_size - 1) / patch_size;
  std::vector<std::uint8_t> out(f_n * th * tw, 0);
  for (std::size_t f = 0; f < f_n; ++f)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        if (pixel_masks[(f * h + y) * w + x]) out[(f * th + y / patch_size) * tw + x / patch_size] = 1;
  return MaskGrid(Resolution::kToken, {f_n, th, tw}, std::move(out));
}

MaskGrid expand_with_effects(const MaskGrid& object_pixels, const MaskGrid& effect_tokens, PatchSize patch) {
  return mask_union(object_pixels, to_pixel(effect_tokens, patch));
}

}  // namespace wiper
