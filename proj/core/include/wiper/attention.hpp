#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "wiper/matrix.hpp"
#include "wiper/rng.hpp"

namespace wiper {

/// Per-modality projections into the shared attention width d.
struct ProjectionSet {
  Matrix text_query, text_key, text_value;        // d_T x d
  Matrix visual_query, visual_key, visual_value;  // d_I x d

  std::size_t shared_dim() const noexcept { return text_query.cols(); }
  /// Throws ShapeMismatch on inconsistent shapes and InvalidParam on non-finite weights.
  void validate() const;

  /// Seeded Gaussian weights scaled by 1/sqrt(d).
  static ProjectionSet random(SeededRng& rng, std::size_t text_dim, std::size_t visual_dim, std::size_t shared_dim);
};

struct QkvSet {
  Matrix text_query, text_key, text_value;
  Matrix visual_query, visual_key, visual_value;
};

/// f_T W_T and f_I W_I for query, key and value.
QkvSet project_qkv(const Matrix& text_features, const Matrix& visual_features, const ProjectionSet& p);

/// The four blocks of one joint attention matrix over [text; visual] tokens.
struct JointAttentionMaps {
  Matrix text_to_text;      // N_T x N_T
  Matrix text_to_visual;    // N_T x N_I
  Matrix visual_to_text;    // N_I x N_T
  Matrix visual_to_visual;  // N_I x N_I

  std::size_t text_tokens() const noexcept { return text_to_text.rows(); }
  std::size_t visual_tokens() const noexcept { return visual_to_visual.rows(); }

  /// The full (N_T + N_I) x (N_T + N_I) matrix.
  Matrix assemble() const;
  /// Splits a full joint matrix back into blocks.
  static JointAttentionMaps split(const Matrix& joint, std::size_t text_tokens);
};

struct AttentionOptions {
  /// Normalize each of the four blocks on its own instead of over the joint key axis.
  bool block_softmax = false;
};

/// softmax(Q (s ⊙ K)^T / sqrt(d)) where K is the concatenation of `key_blocks` and
/// `key_scale` (empty, or one factor per concatenated key) multiplies each key before the product.
/// Every row is computed independently with a fixed summation order.
Matrix attention_rows(const Matrix& queries, std::span<const Matrix* const> key_blocks,
                      std::span<const float> key_scale = {});
Matrix attention_rows(const Matrix& queries, std::initializer_list<const Matrix*> key_blocks,
                      std::span<const float> key_scale = {});

JointAttentionMaps joint_attention(const Matrix& text_query, const Matrix& text_key, const Matrix& visual_query,
                                   const Matrix& visual_key, AttentionOptions options = {});
JointAttentionMaps joint_attention(const QkvSet& qkv, AttentionOptions options = {});

/// Background-query rows with object keys multiplied by c, columns ordered [object | background].
/// Requires 0 < c <= 1.
Matrix scale_bg_to_obj(const Matrix& bg_query, const Matrix& obj_key, const Matrix& bg_key, float c);

/// Object-query rows with background keys multiplied by b, columns ordered [background | object].
/// Requires b >= 1.
Matrix scale_obj_to_bg(const Matrix& obj_query, const Matrix& bg_key, const Matrix& obj_key, float b);

/// Mask-driven form of both transforms for a whole layer.
struct KeyScaling {
  std::vector<std::uint8_t> object;  // one flag per visual token
  float bg_to_obj = 1.0f;            // c
  float obj_to_bg = 1.0f;            // b
};

/// Attention of every visual query over the joint key set [text | visual]. With a scaling,
/// background queries see object keys times c and object queries see background keys times b.
/// Text keys are never scaled.
Matrix visual_attention_rows(const Matrix& visual_query, const Matrix& text_key, const Matrix& visual_key,
                             const KeyScaling* scaling = nullptr);

}  // namespace wiper
