#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wiper/mask.hpp"
#include "wiper/tensor.hpp"

namespace wiper {

inline constexpr std::size_t kDefaultNeighbourhoodPx = 24;

/// Per-frame token embeddings [F, H', W', D] from a vision transformer with square patches.
class EmbeddingVideo {
 public:
  /// Throws ShapeMismatch unless rank 4, InvalidParam on a zero-norm token.
  EmbeddingVideo(Tensor embeddings, std::size_t patch_size);

  std::size_t frames() const noexcept { return embeddings_.dim(0); }
  std::size_t height() const noexcept { return embeddings_.dim(1); }
  std::size_t width() const noexcept { return embeddings_.dim(2); }
  std::size_t dim() const noexcept { return embeddings_.dim(3); }
  std::size_t patch_size() const noexcept { return patch_size_; }
  Shape grid() const { return {frames(), height(), width()}; }

  std::span<const float> token(std::size_t frame, std::size_t y, std::size_t x) const;
  const Tensor& tensor() const noexcept { return embeddings_; }

 private:
  Tensor embeddings_;
  std::size_t patch_size_;
};

struct TokSimPairStats {
  std::size_t frame = 0;           // k of the pair (k, k+1)
  std::size_t object_tokens = 0;   // tokens in the union mask
  std::size_t counted_tokens = 0;  // tokens with at least one background neighbour
  double mean_lambda = 0.0;        // raw cosine means over object tokens
  double mean_eta = 0.0;
  double mean_tau = 0.0;           // over counted tokens
};

struct TokSimReport {
  double score = 0.0;  // in [0, 100]
  std::size_t counted_terms = 0;
  std::size_t skipped_tokens = 0;  // object tokens with no background neighbour in range
  std::vector<TokSimPairStats> pairs;
};

/// Chebyshev token radius covering `neighbourhood_px` pixels: ceil(px / patch).
std::size_t neighbourhood_radius(std::size_t neighbourhood_px, std::size_t patch_size);

/// 100 * mean over (frame pair, object token) of clamp(λ) clamp(1 - η) clamp(τ), where for the
/// union of masks k and k+1: λ = cos(out_k, out_k+1), η = cos(out_k, in_k), and τ is the mean cosine
/// of out_k with output background tokens within the radius and outside the union.
/// `masks` is a per-frame token mask [F, H', W'].
/// Throws MetricUndefined when every mask is empty or no token has a background neighbour.
TokSimReport toksim(const EmbeddingVideo& input, const EmbeddingVideo& output, const MaskGrid& masks,
                    std::size_t neighbourhood_px = kDefaultNeighbourhoodPx);

struct PsnrResult {
  double db = 0.0;  // +inf when identical
  bool identical = false;
};

/// PSNR (peak 255) over pixels where the mask is 0, pooled over all frames and channels.
/// Videos are [F, H, W] or [C, F, H, W]; the mask is [F, H, W].
/// Throws MetricUndefined for an all-one mask.
PsnrResult bg_psnr(const Tensor& input, const Tensor& output, const MaskGrid& mask);

/// Mean over consecutive frame pairs of the mean |frame_k - frame_k+1| inside the union of
/// their masks. Pairs with an empty union are skipped; throws MetricUndefined if all are.
double fg_flicker(const Tensor& video, const MaskGrid& masks);

/// Per-frame max-pool of a pixel mask [F, H, W] onto ceil(H/p) x ceil(W/p) tokens.
MaskGrid pool_frame_masks(const MaskGrid& pixel_masks, std::size_t patch_size);

/// M^obj ∪ upsampled M^AE, for scoring removals that include associated effects.
MaskGrid expand_with_effects(const MaskGrid& object_pixels, const MaskGrid& effect_tokens,
                             PatchSize patch = kTokenPatch);

}  // namespace wiper
