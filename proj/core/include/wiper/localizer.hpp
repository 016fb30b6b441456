#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "wiper/attention.hpp"
#include "wiper/mask.hpp"
#include "wiper/tensor.hpp"

namespace wiper {

/// Inversion steps whose MMDiT layers feed localization by default.
inline const std::vector<int> kDefaultLocalizationTimesteps{6, 7, 10};
inline constexpr std::size_t kOtsuBins = 256;

/// Mean text->visual attention of the query tokens, on the token grid.
struct RelevanceMap {
  Tensor values;  // [F', H', W'], non-negative
};

/// Fraction of each token's self-attention row mass that lands on a token set.
struct ResponseMap {
  Tensor values;  // [F', H', W'], in [0, 1]
};

struct OtsuResult {
  std::size_t bin = 0;     // last histogram bin of the lower class
  float threshold = 0.0f;  // upper edge of `bin`, in input units
  MaskGrid mask;           // tokens whose bin lies above `bin`
};

/// Rows of A_TI for the query tokens, averaged over queries and then over maps.
/// Throws InvalidParam for an empty query set, an out-of-range query or no maps.
RelevanceMap relevance_map(std::span<const JointAttentionMaps> maps, std::span<const std::size_t> query_tokens,
                           const Shape& token_grid);

/// Otsu's threshold over a 256-bin histogram of min-max normalized values (rank-3 token grid).
/// Maximizes the between-class variance of bin levels; ties resolve to the lowest bin.
/// Throws DegenerateInput for a constant map.
OtsuResult otsu_threshold(const Tensor& values);

/// R(p) = sum over proposal of A[p, y] / sum over all of A[p, x].
/// Throws InvalidParam for an empty proposal.
ResponseMap response_map(const Matrix& self_attention, const MaskGrid& proposal);

/// Element-wise mean of several self-attention blocks.
Matrix mean_visual_self_attention(std::span<const JointAttentionMaps> maps);

struct LocalizerOptions {
  /// Threshold R at this value instead of running Otsu on it.
  std::optional<float> fixed_threshold;
  /// Seed refinement with this token mask (e.g. the user object mask) instead of the Otsu proposal.
  std::optional<MaskGrid> seed_mask;
};

struct Localization {
  RelevanceMap relevance;
  OtsuResult proposal;
  ResponseMap response;
  float refine_threshold = 0.0f;
  MaskGrid effect_mask;
};

/// Text relevance -> Otsu proposal -> self-attention response ratio -> thresholded effect mask.
Localization localize_effects(std::span<const JointAttentionMaps> maps, std::span<const std::size_t> query_tokens,
                              const Shape& token_grid, const LocalizerOptions& options = {});

}  // namespace wiper
