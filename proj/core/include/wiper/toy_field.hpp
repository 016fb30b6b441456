#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "wiper/attention.hpp"
#include "wiper/velocity_field.hpp"

namespace wiper {

struct ToyFieldConfig {
  std::uint64_t seed = 42;
  std::size_t mmdit_layers = 2;
  std::size_t single_layers = 20;
  std::size_t text_tokens = 6;
  std::size_t text_dim = 8;
  std::size_t shared_dim = 16;
  std::size_t patch = 2;          // latent cells per token side
  double spectral_norm = 0.3;     // ||A||_2 of the linear drift
  double drift_scale = 0.02;      // std of the time-dependent drift u
  double cond_bias_scale = 0.05;  // std of the conditional bias
  double attention_gain = 0.5;    // weight of the attention residual in the velocity
};

/// Seeded stand-in for a video DiT over latents [C, F', H, W]:
///
///   v(Z, t) = A vec(Z) + t u (+ bias if conditional) + gain * unpatchify(h_L - h_0)
///
/// where h_0 = patchify(Z) and each layer adds the visual queries' attention over
/// [text | visual] keys applied to [V_T; V_I], projected back to the patch width.
/// Text features are zero for the unconditional branch.
class ToyField final : public VelocityField {
 public:
  ToyField(const Shape& latent_shape, const ToyFieldConfig& config);

  FieldLayout layout() const override;
  Tensor evaluate(const Tensor& z, double t, Guidance guidance, LayerObserver* observer) const override;

  const ToyFieldConfig& config() const noexcept { return config_; }
  const Shape& latent_shape() const noexcept { return latent_shape_; }
  std::size_t visual_dim() const noexcept { return latent_shape_[0] * config_.patch * config_.patch; }

  const Matrix& text_features() const noexcept { return text_features_; }
  /// Overrides the conditional text features (N_T x d_T).
  void set_text_features(Matrix features);
  const ProjectionSet& projections(std::size_t layer) const { return layers_.at(layer).projections; }

  Matrix patchify(const Tensor& z) const;
  Tensor unpatchify(const Matrix& tokens) const;

 private:
  struct Layer {
    ProjectionSet projections;
    Matrix output;  // d x d_I
  };

  ToyFieldConfig config_;
  Shape latent_shape_;
  Shape token_grid_;
  Matrix drift_matrix_;  // n x n
  std::vector<float> drift_;
  std::vector<float> cond_bias_;
  Matrix text_features_;
  std::vector<Layer> layers_;
};

}  // namespace wiper
