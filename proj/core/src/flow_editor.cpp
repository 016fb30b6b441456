#include "wiper/flow_editor.hpp"

#include <cmath>
#include <string>

#include "wiper/error.hpp"

namespace wiper {
namespace {

std::vector<std::uint8_t> flags_of(const MaskGrid& m) { return {m.values().begin(), m.values().end()}; }

void require_token_mask(const MaskGrid& m, const FieldLayout& layout, const char* what) {
  if (m.resolution() != Resolution::kToken || m.shape() != layout.token_grid) {
    throw ShapeMismatch(std::string(what) + " must be a token mask on grid " + shape_to_string(layout.token_grid) +
                        ", got " + std::string(to_string(m.resolution())) + shape_to_string(m.shape()));
  }
}

void require_finite_latent(const Tensor& z, const char* pass, std::size_t step) {
  if (z.first_non_finite() != z.size()) throw NumericalBlowup(pass, step);
}

// Conditional-branch hooks for one inversion step.
class InversionObserver final : public LayerObserver {
 public:
  InversionObserver(EditSession& session, const FieldLayout& layout, std::size_t step, bool scale, bool cache)
      : session_(session), layout_(layout), step_(step), cache_(cache) {
    if (scale) {
      scaling_ = KeyScaling{flags_of(session.removal_tokens()), session.config.c, 1.0f};
    }
    const std::size_t n = layout.visual_tokens();
    if (cache_) self_attention_sum_.assign(n * n, 0.0);
  }

  void on_layer(std::size_t layer, LayerTensors& tensors) override {
    if (!cache_) return;
    if (layer + session_.config.cache_layers >= layout_.layers()) {
      session_.values.insert_or_assign(ValueKey{step_, layer}, tensors.visual_value);
      ++cache_writes_;
    }
    const bool single = layout_.single_layers == 0 || layer >= layout_.mmdit_layers;
    if (single) {
      const Matrix a = attention_rows(tensors.visual_query, {&tensors.visual_key});
      for (std::size_t i = 0; i < self_attention_sum_.size(); ++i) self_attention_sum_[i] += a.data()[i];
      ++attention_layers_;
    }
  }

  const KeyScaling* scaling(std::size_t) override { return scaling_ ? &*scaling_ : nullptr; }

  /// Stores M̂_t ∪ M^AE ∪ M^obj for this step. Returns the masked token count.
  std::size_t store_adaptive_mask() {
    if (!cache_ || attention_layers_ == 0) return 0;
    const std::size_t n = layout_.visual_tokens();
    Matrix mean(n, n);
    for (std::size_t i = 0; i < self_attention_sum_.size(); ++i) {
      mean.data()[i] = static_cast<float>(self_attention_sum_[i] / static_cast<double>(attention_layers_));
    }
    const ResponseMap rs = response_score(mean, session_.object_tokens);
    MaskGrid m = adaptive_mask(rs, session_.config.rs_threshold, session_.effect_tokens, session_.object_tokens);
    const std::size_t count = m.count();
    session_.adaptive.put(step_, std::move(m));
    return count;
  }

  std::size_t cache_writes() const noexcept { return cache_writes_; }

 private:
  EditSession& session_;
  const FieldLayout& layout_;
  std::size_t step_;
  bool cache_;
  std::optional<KeyScaling> scaling_;
  std::vector<double> self_attention_sum_;
  std::size_t attention_layers_ = 0;
  std::size_t cache_writes_ = 0;
};

// Scaling-only hooks (unconditional branch of inversion).
class ScalingObserver final : public LayerObserver {
 public:
  explicit ScalingObserver(std::optional<KeyScaling> scaling) : scaling_(std::move(scaling)) {}
  const KeyScaling* scaling(std::size_t) override { return scaling_ ? &*scaling_ : nullptr; }

 private:
  std::optional<KeyScaling> scaling_;
};

class DenoiseObserver final : public LayerObserver {
 public:
  DenoiseObserver(EditSession& session, const FieldLayout& layout, std::size_t denoise_step,
                  std::size_t inversion_step, const MaskGrid& mask, bool scale, bool copy)
      : session_(session),
        layout_(layout),
        denoise_step_(denoise_step),
        inversion_step_(inversion_step),
        mask_(mask),
        copy_(copy) {
    if (scale) scaling_ = KeyScaling{flags_of(mask), session.config.c, session.config.b};
  }

  void on_layer(std::size_t layer, LayerTensors& tensors) override {
    if (!copy_ || layer + session_.config.cache_layers < layout_.layers()) return;
    const auto it = session_.values.find(ValueKey{inversion_step_, layer});
    if (it == session_.values.end()) {
      throw ProtocolError("no cached values for inversion step " + std::to_string(inversion_step_) + ", layer " +
                          std::to_string(layer));
    }
    const Matrix& cached = it->second;
    Matrix& value = tensors.visual_value;
    if (cached.rows() != value.rows() || cached.cols() != value.cols()) {
      throw ProtocolError("cached values for layer " + std::to_string(layer) + " have the wrong shape");
    }
    CopyEvent event{denoise_step_, inversion_step_, layer, {}};
    for (std::size_t p = 0; p < value.rows(); ++p) {
      if (mask_[p]) continue;
      std::copy(cached.row(p).begin(), cached.row(p).end(), value.row(p).begin());
      event.rows.push_back(p);
    }
    copied_rows_ += event.rows.size();
    ++cache_hits_;
    session_.copy_events.push_back(std::move(event));
  }

  const KeyScaling* scaling(std::size_t) override { return scaling_ ? &*scaling_ : nullptr; }

  std::size_t cache_hits() const noexcept { return cache_hits_; }
  std::size_t copied_rows() const noexcept { return copied_rows_; }

 private:
  EditSession& session_;
  const FieldLayout& layout_;
  std::size_t denoise_step_;
  std::size_t inversion_step_;
  const MaskGrid& mask_;
  bool copy_;
  std::optional<KeyScaling> scaling_;
  std::size_t cache_hits_ = 0;
  std::size_t copied_rows_ = 0;
};

}  // namespace

void ScheduleConfig::validate(const FieldLayout& layout) const {
  if (total_steps == 0) throw InvalidParam("total_steps must be positive");
  if (cache_steps == 0 || cache_steps > total_steps) throw InvalidParam("cache_steps must lie in [1, total_steps]");
  if (scale_steps == 0 || scale_steps > total_steps) throw InvalidParam("scale_steps must lie in [1, total_steps]");
  if (!(c > 0.0f) || c > 1.0f) throw InvalidParam("c must lie in (0, 1]");
  if (!(b >= 1.0f) || !std::isfinite(b)) throw InvalidParam("b must be >= 1");
  if (!std::isfinite(cfg_invert) || !std::isfinite(cfg_denoise)) throw InvalidParam("cfg scales must be finite");
  if (!(rs_threshold > 0.0f && rs_threshold < 1.0f)) throw InvalidParam("rs_threshold must lie in (0, 1)");
  if (cache_layers == 0 || cache_layers > layout.single_layers) {
    throw InvalidParam("cache_layers must lie in [1, " + std::to_string(layout.single_layers) +
                       "] for a field with that many single-stream layers");
  }
}

Tensor EulerStep::step(const Tensor& z, double t, double dt, const VelocityFn& velocity) const {
  const Tensor v = velocity(z, t);
  Tensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(z[i]) + dt * static_cast<double>(v[i]));
  }
  return out;
}

Tensor guided_velocity(const VelocityField& field, const Tensor& z, double t, double cfg, LayerObserver* conditional,
                       LayerObserver* unconditional) {
  Tensor vc = field.evaluate(z, t, Guidance::kConditional, conditional);
  if (cfg == 1.0) return vc;
  const Tensor vu = field.evaluate(z, t, Guidance::kUnconditional, unconditional);
  for (std::size_t i = 0; i < vc.size(); ++i) {
    vc[i] = static_cast<float>(static_cast<double>(vu[i]) + cfg * (static_cast<double>(vc[i]) - vu[i]));
  }
  return vc;
}

EditSession invert(const Tensor& z0, const VelocityField& field, const ScheduleConfig& config,
                   const MaskGrid& object_tokens, const MaskGrid& effect_tokens, const StepRule& rule) {
  const FieldLayout layout = field.layout();
  config.validate(layout);
  require_token_mask(object_tokens, layout, "object mask");
  require_token_mask(effect_tokens, layout, "effect mask");
  if (z0.first_non_finite() != z0.size()) throw InvalidParam("source latent contains non-finite values");

  EditSession session;
  session.config = config;
  session.object_tokens = object_tokens;
  session.effect_tokens = effect_tokens;
  session.adaptive = AdaptiveMaskStore(config.total_steps, config.cache_steps);
  session.trajectory.reserve(config.total_steps + 1);
  session.trajectory.push_back(z0);

  const std::size_t n = config.total_steps;
  const double dt = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const bool scale = i + config.scale_steps >= n;
    const bool cache = i + config.cache_steps >= n;

    InversionObserver cond(session, layout, i, scale, cache);
    ScalingObserver uncond(scale ? std::optional<KeyScaling>(KeyScaling{flags_of(session.removal_tokens()), config.c, 1.0f})
                                 : std::nullopt);
    const VelocityFn velocity = [&](const Tensor& z, double tt) {
      return guided_velocity(field, z, tt, config.cfg_invert, &cond, &uncond);
    };
    Tensor next = rule.step(session.trajectory.back(), t, dt, velocity);
    require_finite_latent(next, "inversion", i);
    const std::size_t masked = cond.store_adaptive_mask();

    session.diagnostics.push_back(StepDiagnostics{"invert", i, t, max_abs(next), scale, cond.cache_writes(), 0, 0, masked});
    session.trajectory.push_back(std::move(next));
  }
  return session;
}

Tensor reinitialize(const EditSession& session, SeededRng& rng, const MaskGrid& latent_mask) {
  const Tensor& z1 = session.inverted();
  if (latent_mask.resolution() != Resolution::kLatent || latent_mask.shape() != z1.shape()) {
    throw ShapeMismatch("reinitialization mask must be a latent mask of shape " + shape_to_string(z1.shape()));
  }
  const Tensor noise = gaussian(rng, z1.shape());
  Tensor out = z1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (latent_mask[i]) out[i] = noise[i];
  }
  return out;
}

Tensor denoise(EditSession& session, const Tensor& start, const VelocityField& field, const StepRule& rule) {
  const ScheduleConfig& config = session.config;
  const FieldLayout layout = field.layout();
  config.validate(layout);
  if (session.trajectory.size() != config.total_steps + 1) {
    throw ProtocolError("denoise needs a session produced by invert");
  }
  if (start.shape() != session.inverted().shape()) throw ShapeMismatch("start latent does not match the session");

  const MaskGrid fixed = session.removal_tokens();
  const std::size_t n = config.total_steps;
  const double dt = 1.0 / static_cast<double>(n);
  Tensor z = start;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t paired = n - 1 - j;
    const double t = static_cast<double>(n - j) * dt;
    const bool copy = config.copy_back && j < config.cache_steps;
    const bool scale = j < config.scale_steps;

    const MaskGrid* adaptive = copy ? &session.adaptive.at(paired) : session.adaptive.find(paired);
    const MaskGrid& mask = adaptive != nullptr ? *adaptive : fixed;

    DenoiseObserver cond(session, layout, j, paired, mask, scale, copy);
    DenoiseObserver uncond(session, layout, j, paired, mask, scale, copy);
    const VelocityFn velocity = [&](const Tensor& zz, double tt) {
      return guided_velocity(field, zz, tt, config.cfg_denoise, &cond, &uncond);
    };
    z = rule.step(z, t, -dt, velocity);
    require_finite_latent(z, "denoising", j);

    session.diagnostics.push_back(StepDiagnostics{"denoise", j, t, max_abs(z), scale, 0,
                                                  cond.cache_hits() + uncond.cache_hits(),
                                                  cond.copied_rows() + uncond.copied_rows(), mask.count()});
  }
  return z;
}

MaskGrid removal_latent_mask(const MaskGrid& object_pixels, const std::optional<MaskGrid>& effect_tokens,
                             std::size_t channels, std::size_t latent_per_token) {
  MaskGrid latent = to_latent(object_pixels, channels);
  if (effect_tokens) latent = mask_union(latent, token_to_latent(*effect_tokens, channels, latent_per_token));
  return latent;
}

}  // namespace wiper
