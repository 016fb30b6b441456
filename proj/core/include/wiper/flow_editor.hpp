#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "wiper/adaptive_mask.hpp"
#include "wiper/mask.hpp"
#include "wiper/rng.hpp"
#include "wiper/velocity_field.hpp"

namespace wiper {

/// Inversion/denoising schedule. Defaults follow the reference setup.
struct ScheduleConfig {
  std::size_t total_steps = 25;
  std::size_t cache_steps = 15;   // k: value caching / copy-back and adaptive masks
  std::size_t cache_layers = 20;  // r: last single-stream layers that cache values
  std::size_t scale_steps = 10;   // attention scaling at the noisy end of both passes
  float c = 0.8f;                 // background -> object key scale
  float b = 1.2f;                 // object -> background key scale
  double cfg_invert = 1.0;
  double cfg_denoise = 5.0;
  float rs_threshold = kDefaultResponseThreshold;
  bool copy_back = true;

  /// Throws InvalidParam when a value is out of range or the field has too few single layers.
  void validate(const FieldLayout& layout) const;
};

/// (inversion step, layer) key of a cached value tensor.
struct ValueKey {
  std::size_t step = 0;
  std::size_t layer = 0;
  auto operator<=>(const ValueKey&) const = default;
};

using ValueCache = std::map<ValueKey, Matrix>;

struct StepDiagnostics {
  std::string pass;  // "invert" or "denoise"
  std::size_t step = 0;
  double t = 0.0;  // time at which the velocity was evaluated
  double max_abs = 0.0;
  bool scaled = false;
  std::size_t cache_writes = 0;
  std::size_t cache_hits = 0;
  std::size_t copied_rows = 0;
  std::size_t masked_tokens = 0;
};

/// Rows of V_I overwritten from the cache during one denoising layer evaluation.
struct CopyEvent {
  std::size_t denoise_step = 0;
  std::size_t inversion_step = 0;
  std::size_t layer = 0;
  std::vector<std::size_t> rows;
};

struct EditSession {
  ScheduleConfig config;
  std::vector<Tensor> trajectory;  // Z at t = 0, 1/N, ..., 1
  ValueCache values;
  AdaptiveMaskStore adaptive;
  MaskGrid object_tokens;  // M^obj
  MaskGrid effect_tokens;  // M^AE
  std::vector<StepDiagnostics> diagnostics;
  std::vector<CopyEvent> copy_events;

  const Tensor& inverted() const { return trajectory.back(); }
  /// M^obj ∪ M^AE on the token grid.
  MaskGrid removal_tokens() const { return mask_union(object_tokens, effect_tokens); }
};

using VelocityFn = std::function<Tensor(const Tensor&, double)>;

/// One integration step of the rectified-flow ODE.
class StepRule {
 public:
  virtual ~StepRule() = default;
  virtual Tensor step(const Tensor& z, double t, double dt, const VelocityFn& velocity) const = 0;
};

/// z + dt * v(z, t).
class EulerStep final : public StepRule {
 public:
  Tensor step(const Tensor& z, double t, double dt, const VelocityFn& velocity) const override;
};

/// v_u + cfg (v_c - v_u). With cfg == 1 only the conditional branch is evaluated.
Tensor guided_velocity(const VelocityField& field, const Tensor& z, double t, double cfg, LayerObserver* conditional,
                       LayerObserver* unconditional);

/// Integrates Z_0 to t = 1. During the last scale_steps, background queries see object keys
/// scaled by c using the fixed M^obj ∪ M^AE. During the last cache_steps, values of the last
/// cache_layers layers are cached and adaptive masks are computed from the unscaled self-attention.
/// Throws NumericalBlowup on a non-finite latent.
EditSession invert(const Tensor& z0, const VelocityField& field, const ScheduleConfig& config,
                   const MaskGrid& object_tokens, const MaskGrid& effect_tokens, const StepRule& rule = EulerStep{});

/// Z_1 (1 - M) + eps M with eps drawn for the whole latent. `latent_mask` must match the latent.
Tensor reinitialize(const EditSession& session, SeededRng& rng, const MaskGrid& latent_mask);

/// Integrates `start` back to t = 0. Denoising step j pairs with inversion step N-1-j.
/// During the first scale_steps both key scalings apply over the adaptive mask; during the
/// first cache_steps cached values are copied into rows outside the adaptive mask.
/// Throws ProtocolError on a missing cache entry and NumericalBlowup on a non-finite latent.
Tensor denoise(EditSession& session, const Tensor& start, const VelocityField& field,
               const StepRule& rule = EulerStep{});

/// M^obj (pixel) and optional M^AE (token) resampled onto the latent grid and united.
MaskGrid removal_latent_mask(const MaskGrid& object_pixels, const std::optional<MaskGrid>& effect_tokens,
                             std::size_t channels, std::size_t latent_per_token = 2);

}  // namespace wiper
