#include "wiper/localizer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "wiper/error.hpp"

namespace wiper {
namespace {

void require_grid(const Shape& grid, std::size_t tokens) {
  if (grid.size() != 3 || checked_element_count(grid) != tokens) {
    throw ShapeMismatch("token grid " + shape_to_string(grid) + " does not hold " + std::to_string(tokens) +
                        " visual tokens");
  }
}

}  // namespace

RelevanceMap relevance_map(std::span<const JointAttentionMaps> maps, std::span<const std::size_t> query_tokens,
                           const Shape& token_grid) {
  if (maps.empty()) throw InvalidParam("relevance map needs at least one attention map");
  if (query_tokens.empty()) throw InvalidParam("query token set is empty");
  const std::size_t n_text = maps.front().text_tokens();
  const std::size_t n_visual = maps.front().visual_tokens();
  require_grid(token_grid, n_visual);
  for (std::size_t q : query_tokens) {
    if (q >= n_text) {
      throw InvalidParam("query token " + std::to_string(q) + " out of range for " + std::to_string(n_text) +
                         " text tokens");
    }
  }

  std::vector<double> acc(n_visual, 0.0);
  for (const auto& m : maps) {
    if (m.text_tokens() != n_text || m.visual_tokens() != n_visual) {
      throw ShapeMismatch("attention maps disagree in token counts");
    }
    std::vector<double> per_map(n_visual, 0.0);
    for (std::size_t q : query_tokens) {
      const auto row = m.text_to_visual.row(q);
      for (std::size_t p = 0; p < n_visual; ++p) per_map[p] += row[p];
    }
    for (std::size_t p = 0; p < n_visual; ++p) acc[p] += per_map[p] / static_cast<double>(query_tokens.size());
  }

  Tensor values(token_grid);
  for (std::size_t p = 0; p < n_visual; ++p) values[p] = static_cast<float>(acc[p] / static_cast<double>(maps.size()));
  return RelevanceMap{std::move(values)};
}

OtsuResult otsu_threshold(const Tensor& values) {
  if (values.rank() != 3) throw ShapeMismatch("Otsu expects a rank-3 token grid");
  const auto [lo_it, hi_it] = std::minmax_element(values.data().begin(), values.data().end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) throw DegenerateInput("constant map has no Otsu threshold");

  const double span = hi - lo;
  std::vector<std::size_t> bins(values.size());
  std::array<double, kOtsuBins> hist{};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double norm = (static_cast<double>(values[i]) - lo) / span;
    bins[i] = std::min<std::size_t>(kOtsuBins - 1, static_cast<std::size_t>(norm * kOtsuBins));
    hist[bins[i]] += 1.0;
  }

  const double total = static_cast<double>(values.size());
  double total_moment = 0.0;
  for (std::size_t b = 0; b < kOtsuBins; ++b) total_moment += static_cast<double>(b) * hist[b];
  const double mean_total = total_moment / total;

  double weight = 0.0, moment = 0.0, best = -1.0;
  std::size_t best_bin = 0;
  for (std::size_t t = 0; t + 1 < kOtsuBins; ++t) {
    weight += hist[t] / total;
    moment += static_cast<double>(t) * hist[t] / total;
    if (weight <= 0.0 || weight >= 1.0) continue;
    const double num = mean_total * weight - moment;
    const double between = num * num / (weight * (1.0 - weight));
    if (between > best) {
      best = between;
      best_bin = t;
    }
  }

  std::vector<std::uint8_t> mask(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) mask[i] = bins[i] > best_bin ? 1 : 0;
  const float threshold = static_cast<float>(lo + span * static_cast<double>(best_bin + 1) / kOtsuBins);
  return OtsuResult{best_bin, threshold, MaskGrid(Resolution::kToken, values.shape(), std::move(mask))};
}

ResponseMap response_map(const Matrix& self_attention, const MaskGrid& proposal) {
  const std::size_t n = self_attention.rows();
  if (self_attention.cols() != n) throw ShapeMismatch("self-attention must be square");
  if (proposal.size() != n) {
    throw ShapeMismatch("proposal has " + std::to_string(proposal.size()) + " tokens, attention has " +
                        std::to_string(n));
  }
  if (!proposal.any()) throw InvalidParam("proposal mask is empty");

  Tensor values(proposal.shape());
  for (std::size_t p = 0; p < n; ++p) {
    // Same summation order for both sums keeps partial <= total exactly.
    double partial = 0.0, total = 0.0;
    const auto row = self_attention.row(p);
    for (std::size_t y = 0; y < n; ++y) {
      total += row[y];
      partial += proposal[y] ? static_cast<double>(row[y]) : 0.0;
    }
    values[p] = total > 0.0 ? static_cast<float>(partial / total) : 0.0f;
  }
  return ResponseMap{std::move(values)};
}

Matrix mean_visual_self_attention(std::span<const JointAttentionMaps> maps) {
  if (maps.empty()) throw InvalidParam("no attention maps to average");
  const std::size_t n = maps.front().visual_tokens();
  std::vector<double> acc(n * n, 0.0);
  for (const auto& m : maps) {
    if (m.visual_tokens() != n) throw ShapeMismatch("attention maps disagree in visual token count");
    const auto d = m.visual_to_visual.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += d[i];
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < acc.size(); ++i) out.data()[i] = static_cast<float>(acc[i] / static_cast<double>(maps.size()));
  return out;
}

Localization localize_effects(std::span<const JointAttentionMaps> maps, std::span<const std::size_t> query_tokens,
                              const Shape& token_grid, const LocalizerOptions& options) {
  Localization out;
  out.relevance = relevance_map(maps, query_tokens, token_grid);
  out.proposal = otsu_threshold(out.relevance.values);

  const MaskGrid& seed = options.seed_mask ? *options.seed_mask : out.proposal.mask;
  if (seed.resolution() != Resolution::kToken || seed.shape() != token_grid) {
    throw ShapeMismatch("refinement seed mask must be a token mask on grid " + shape_to_string(token_grid));
  }
  out.response = response_map(mean_visual_self_attention(maps), seed);

  if (options.fixed_threshold) {
    const float thr = *options.fixed_threshold;
    std::vector<std::uint8_t> mask(out.response.values.size());
    for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = out.response.values[i] > thr ? 1 : 0;
    out.refine_threshold = thr;
    out.effect_mask = MaskGrid(Resolution::kToken, token_grid, std::move(mask));
  } else {
    OtsuResult refined = otsu_threshold(out.response.values);
    out.refine_threshold = refined.threshold;
    out.effect_mask = std::move(refined.mask);
  }
  return out;
}

}  // namespace wiper
