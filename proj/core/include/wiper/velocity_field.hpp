#pragma once

#include <cstddef>
#include <cstdint>

#include "wiper/attention.hpp"
#include "wiper/tensor.hpp"

namespace wiper {

enum class Guidance : std::uint8_t { kUnconditional, kConditional };

/// Tensors of one attention layer as seen by a LayerObserver. Only the visual values may be edited.
struct LayerTensors {
  const Matrix& text_query;
  const Matrix& text_key;
  const Matrix& visual_query;
  const Matrix& visual_key;
  Matrix& visual_value;
};

/// Hooks a velocity field calls for every attention layer during one evaluation.
class LayerObserver {
 public:
  virtual ~LayerObserver() = default;

  /// Called after projection and before attention.
  virtual void on_layer(std::size_t /*layer*/, LayerTensors& /*tensors*/) {}

  /// Key scaling for this layer's visual queries; nullptr leaves attention unscaled.
  virtual const KeyScaling* scaling(std::size_t /*layer*/) { return nullptr; }
};

/// Attention layout of a field. Layers are numbered with all MMDiT layers first,
/// then the single-stream layers.
struct FieldLayout {
  std::size_t mmdit_layers = 0;
  std::size_t single_layers = 0;
  Shape token_grid;  // [F', H', W']

  std::size_t layers() const noexcept { return mmdit_layers + single_layers; }
  std::size_t visual_tokens() const;
};

/// v_theta(Z, t). Must be deterministic in (Z, t, guidance, observer behaviour).
class VelocityField {
 public:
  virtual ~VelocityField() = default;

  virtual FieldLayout layout() const = 0;
  virtual Tensor evaluate(const Tensor& z, double t, Guidance guidance, LayerObserver* observer) const = 0;
};

}  // namespace wiper
