#include "wiper/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "wiper/error.hpp"
#include "wiper/parallel.hpp"

namespace wiper {
namespace {

void require_finite(const Matrix& m, const char* what) {
  for (float v : m.data()) {
    if (!std::isfinite(v)) throw InvalidParam(std::string(what) + " contains a non-finite value");
  }
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

// One softmax row over concatenated key blocks. `logits` is scratch of the output width.
void softmax_row(std::span<const float> q, std::span<const Matrix* const> blocks, std::span<const float> scale,
                 double inv_sqrt_d, std::span<double> logits, std::span<float> out) {
  std::size_t j = 0;
  for (const Matrix* keys : blocks) {
    for (std::size_t k = 0; k < keys->rows(); ++k, ++j) {
      double logit = dot(q, keys->row(k));
      if (!scale.empty()) logit *= static_cast<double>(scale[j]);
      logits[j] = logit * inv_sqrt_d;
    }
  }
  double peak = -std::numeric_limits<double>::infinity();
  for (double l : logits) peak = std::max(peak, l);
  double sum = 0.0;
  for (double& l : logits) {
    l = std::exp(l - peak);
    sum += l;
  }
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<float>(logits[i] / sum);
}

std::size_t check_blocks(const Matrix& queries, std::span<const Matrix* const> blocks, std::span<const float> scale) {
  if (queries.cols() == 0) throw ShapeMismatch("attention width d must be positive");
  std::size_t total = 0;
  for (const Matrix* keys : blocks) {
    if (keys->cols() != queries.cols()) {
      throw ShapeMismatch("key width " + std::to_string(keys->cols()) + " differs from query width " +
                          std::to_string(queries.cols()));
    }
    total += keys->rows();
  }
  if (total == 0) throw ShapeMismatch("attention needs at least one key");
  if (!scale.empty() && scale.size() != total) throw ShapeMismatch("key scale length does not match key count");
  return total;
}

Matrix stack_columns(const Matrix& left, const Matrix& right) {
  Matrix out(left.rows(), left.cols() + right.cols());
  for (std::size_t i = 0; i < left.rows(); ++i) {
    auto dst = out.row(i);
    std::copy(left.row(i).begin(), left.row(i).end(), dst.begin());
    std::copy(right.row(i).begin(), right.row(i).end(), dst.begin() + static_cast<std::ptrdiff_t>(left.cols()));
  }
  return out;
}

void split_columns(const Matrix& full, std::size_t left_cols, Matrix& left, Matrix& right) {
  left = Matrix(full.rows(), left_cols);
  right = Matrix(full.rows(), full.cols() - left_cols);
  for (std::size_t i = 0; i < full.rows(); ++i) {
    const auto src = full.row(i);
    std::copy(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(left_cols), left.row(i).begin());
    std::copy(src.begin() + static_cast<std::ptrdiff_t>(left_cols), src.end(), right.row(i).begin());
  }
}

}  // namespace

void ProjectionSet::validate() const {
  const std::size_t d = text_query.cols();
  const Matrix* text[] = {&text_query, &text_key, &text_value};
  const Matrix* visual[] = {&visual_query, &visual_key, &visual_value};
  if (d == 0) throw ShapeMismatch("projection width d must be positive");
  for (const Matrix* m : text) {
    if (m->cols() != d || m->rows() != text_query.rows()) throw ShapeMismatch("text projections disagree in shape");
    require_finite(*m, "text projection");
  }
  for (const Matrix* m : visual) {
    if (m->cols() != d || m->rows() != visual_query.rows()) {
      throw ShapeMismatch("visual projections disagree in shape");
    }
    require_finite(*m, "visual projection");
  }
}

ProjectionSet ProjectionSet::random(SeededRng& rng, std::size_t text_dim, std::size_t visual_dim,
                                    std::size_t shared_dim) {
  const float gain = 1.0f / std::sqrt(static_cast<float>(shared_dim));
  auto draw = [&](std::size_t rows) {
    Matrix m(rows, shared_dim);
    for (float& v : m.data()) v = static_cast<float>(rng.next_normal()) * gain;
    return m;
  };
  ProjectionSet p;
  p.text_query = draw(text_dim);
  p.text_key = draw(text_dim);
  p.text_value = draw(text_dim);
  p.visual_query = draw(visual_dim);
  p.visual_key = draw(visual_dim);
  p.visual_value = draw(visual_dim);
  return p;
}

QkvSet project_qkv(const Matrix& text_features, const Matrix& visual_features, const ProjectionSet& p) {
  p.validate();
  if (text_features.cols() != p.text_query.rows()) {
    throw ShapeMismatch("text features have width " + std::to_string(text_features.cols()) + ", projections expect " +
                        std::to_string(p.text_query.rows()));
  }
  if (visual_features.cols() != p.visual_query.rows()) {
    throw ShapeMismatch("visual features have width " + std::to_string(visual_features.cols()) +
                        ", projections expect " + std::to_string(p.visual_query.rows()));
  }
  require_finite(text_features, "text features");
  require_finite(visual_features, "visual features");
  return QkvSet{matmul(text_features, p.text_query),     matmul(text_features, p.text_key),
                matmul(text_features, p.text_value),     matmul(visual_features, p.visual_query),
                matmul(visual_features, p.visual_key),   matmul(visual_features, p.visual_value)};
}

Matrix JointAttentionMaps::assemble() const {
  return vstack(stack_columns(text_to_text, text_to_visual), stack_columns(visual_to_text, visual_to_visual));
}

JointAttentionMaps JointAttentionMaps::split(const Matrix& joint, std::size_t text_tokens) {
  if (joint.rows() != joint.cols() || text_tokens > joint.rows()) {
    throw ShapeMismatch("joint attention must be square with at least N_T rows");
  }
  std::vector<std::size_t> text_rows(text_tokens), visual_rows(joint.rows() - text_tokens);
  for (std::size_t i = 0; i < text_rows.size(); ++i) text_rows[i] = i;
  for (std::size_t i = 0; i < visual_rows.size(); ++i) visual_rows[i] = text_tokens + i;
  JointAttentionMaps maps;
  split_columns(gather_rows(joint, text_rows), text_tokens, maps.text_to_text, maps.text_to_visual);
  split_columns(gather_rows(joint, visual_rows), text_tokens, maps.visual_to_text, maps.visual_to_visual);
  return maps;
}

Matrix attention_rows(const Matrix& queries, std::span<const Matrix* const> key_blocks,
                      std::span<const float> key_scale) {
  const std::size_t width = check_blocks(queries, key_blocks, key_scale);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  Matrix out(queries.rows(), width);
  parallel_for(queries.rows(), [&](std::size_t i) {
    std::vector<double> logits(width);
    softmax_row(queries.row(i), key_blocks, key_scale, inv_sqrt_d, logits, out.row(i));
  });
  return out;
}

Matrix attention_rows(const Matrix& queries, std::initializer_list<const Matrix*> key_blocks,
                      std::span<const float> key_scale) {
  return attention_rows(queries, std::span<const Matrix* const>(key_blocks.begin(), key_blocks.size()), key_scale);
}

JointAttentionMaps joint_attention(const Matrix& text_query, const Matrix& text_key, const Matrix& visual_query,
                                   const Matrix& visual_key, AttentionOptions options) {
  if (text_query.rows() != text_key.rows() || visual_query.rows() != visual_key.rows()) {
    throw ShapeMismatch("query and key token counts differ");
  }
  JointAttentionMaps maps;
  if (options.block_softmax) {
    maps.text_to_text = attention_rows(text_query, {&text_key});
    maps.text_to_visual = attention_rows(text_query, {&visual_key});
    maps.visual_to_text = attention_rows(visual_query, {&text_key});
    maps.visual_to_visual = attention_rows(visual_query, {&visual_key});
    return maps;
  }
  split_columns(attention_rows(text_query, {&text_key, &visual_key}), text_key.rows(), maps.text_to_text,
                maps.text_to_visual);
  split_columns(attention_rows(visual_query, {&text_key, &visual_key}), text_key.rows(), maps.visual_to_text,
                maps.visual_to_visual);
  return maps;
}

JointAttentionMaps joint_attention(const QkvSet& qkv, AttentionOptions options) {
  return joint_attention(qkv.text_query, qkv.text_key, qkv.visual_query, qkv.visual_key, options);
}

Matrix scale_bg_to_obj(const Matrix& bg_query, const Matrix& obj_key, const Matrix& bg_key, float c) {
  if (!(c > 0.0f) || c > 1.0f) throw InvalidParam("bg->obj scale c must lie in (0, 1], got " + std::to_string(c));
  std::vector<float> scale(obj_key.rows() + bg_key.rows(), 1.0f);
  std::fill(scale.begin(), scale.begin() + static_cast<std::ptrdiff_t>(obj_key.rows()), c);
  return attention_rows(bg_query, {&obj_key, &bg_key}, scale);
}

Matrix scale_obj_to_bg(const Matrix& obj_query, const Matrix& bg_key, const Matrix& obj_key, float b) {
  if (!(b >= 1.0f) || !std::isfinite(b)) throw InvalidParam("obj->bg scale b must be >= 1, got " + std::to_string(b));
  std::vector<float> scale(bg_key.rows() + obj_key.rows(), 1.0f);
  std::fill(scale.begin(), scale.begin() + static_cast<std::ptrdiff_t>(bg_key.rows()), b);
  return attention_rows(obj_query, {&bg_key, &obj_key}, scale);
}

Matrix visual_attention_rows(const Matrix& visual_query, const Matrix& text_key, const Matrix& visual_key,
                             const KeyScaling* scaling) {
  const Matrix* blocks[] = {&text_key, &visual_key};
  if (scaling == nullptr) return attention_rows(visual_query, blocks);

  const std::size_t n_text = text_key.rows(), n_visual = visual_key.rows();
  if (scaling->object.size() != n_visual || visual_query.rows() != n_visual) {
    throw ShapeMismatch("key scaling mask has " + std::to_string(scaling->object.size()) + " flags for " +
                        std::to_string(n_visual) + " visual tokens");
  }
  const float c = scaling->bg_to_obj, b = scaling->obj_to_bg;
  if (!(c > 0.0f) || c > 1.0f) throw InvalidParam("bg->obj scale c must lie in (0, 1], got " + std::to_string(c));
  if (!(b >= 1.0f) || !std::isfinite(b)) throw InvalidParam("obj->bg scale b must be >= 1, got " + std::to_string(b));

  // Row scale vectors for the two query roles: text keys first, then visual keys.
  std::vector<float> bg_rows(n_text + n_visual, 1.0f), obj_rows(n_text + n_visual, 1.0f);
  for (std::size_t j = 0; j < n_visual; ++j) {
    if (scaling->object[j]) {
      bg_rows[n_text + j] = c;
    } else {
      obj_rows[n_text + j] = b;
    }
  }
  check_blocks(visual_query, blocks, bg_rows);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(visual_query.cols()));
  Matrix out(n_visual, n_text + n_visual);
  parallel_for(n_visual, [&](std::size_t i) {
    std::vector<double> logits(n_text + n_visual);
    softmax_row(visual_query.row(i), blocks, scaling->object[i] ? obj_rows : bg_rows, inv_sqrt_d, logits,
                out.row(i));
  });
  return out;
}

}  // namespace wiper
