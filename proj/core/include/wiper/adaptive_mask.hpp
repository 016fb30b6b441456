#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "wiper/localizer.hpp"
#include "wiper/mask.hpp"
#include "wiper/matrix.hpp"

namespace wiper {

inline constexpr float kDefaultResponseThreshold = 0.5f;

/// Object response score for one frame. `frame_attention` is the same-frame block
/// A^{I(j)->I(j)} and `object` flags that frame's object tokens. An empty object set yields zeros.
std::vector<float> response_score_frame(const Matrix& frame_attention, std::span<const std::uint8_t> object);

/// Per-frame response scores over a whole token grid; cross-frame attention is ignored.
ResponseMap response_score(const Matrix& visual_self_attention, const MaskGrid& object_tokens);

/// (RS > threshold) ∪ effect ∪ object. Requires threshold in (0, 1).
MaskGrid adaptive_mask(const ResponseMap& rs, float threshold, const MaskGrid& effect, const MaskGrid& object);

/// Timestep-adaptive object masks for the last `window` inversion steps, keyed by inversion step index.
class AdaptiveMaskStore {
 public:
  AdaptiveMaskStore() = default;
  AdaptiveMaskStore(std::size_t total_steps, std::size_t window);

  std::size_t total_steps() const noexcept { return total_steps_; }
  std::size_t window() const noexcept { return window_; }
  std::size_t first_step() const noexcept { return total_steps_ - window_; }
  bool in_window(std::size_t step) const noexcept { return step >= first_step() && step < total_steps_; }

  /// Throws InvalidParam for a step outside the window.
  void put(std::size_t step, MaskGrid mask);
  const MaskGrid* find(std::size_t step) const;
  /// Throws ProtocolError when the step was never stored.
  const MaskGrid& at(std::size_t step) const;

  std::size_t size() const noexcept { return masks_.size(); }
  bool complete() const noexcept { return masks_.size() == window_; }
  const std::map<std::size_t, MaskGrid>& masks() const noexcept { return masks_; }

  /// One WTSR1 token mask per step plus `index.json`.
  void save(const std::filesystem::path& dir) const;
  static AdaptiveMaskStore load(const std::filesystem::path& dir);

 private:
  std::size_t total_steps_ = 0;
  std::size_t window_ = 0;
  std::map<std::size_t, MaskGrid> masks_;
};

}  // namespace wiper
