#include "wiper/toy_field.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "wiper/error.hpp"
#include "wiper/rng.hpp"

namespace wiper {
namespace {

constexpr int kPowerIterations = 60;

double estimate_spectral_norm(const Matrix& a, SeededRng& rng) {
  const std::size_t n = a.cols();
  std::vector<double> v(n), av(a.rows()), atav(n);
  for (double& x : v) x = rng.next_normal();
  double sigma = 0.0;
  for (int it = 0; it < kPowerIterations; ++it) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(a(i, j)) * v[j];
      av[i] = s;
    }
    std::fill(atav.begin(), atav.end(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) atav[j] += static_cast<double>(a(i, j)) * av[i];
    double s2 = 0.0;
    for (double x : atav) s2 += x * x;
    sigma = std::sqrt(std::sqrt(s2));
    v = atav;
  }
  return sigma;
}

Matrix gaussian_matrix(SeededRng& rng, std::size_t rows, std::size_t cols, double scale) {
  Matrix m(rows, cols);
  for (float& v : m.data()) v = static_cast<float>(rng.next_normal() * scale);
  return m;
}

}  // namespace

std::size_t FieldLayout::visual_tokens() const {
  return token_grid.empty() ? 0 : checked_element_count(token_grid);
}

ToyField::ToyField(const Shape& latent_shape, const ToyFieldConfig& config)
    : config_(config), latent_shape_(latent_shape) {
  if (latent_shape.size() != 4) throw ShapeMismatch("toy field expects a [C, F, H, W] latent");
  const std::size_t n = checked_element_count(latent_shape);
  if (config.patch == 0 || latent_shape[2] % config.patch != 0 || latent_shape[3] % config.patch != 0) {
    throw ShapeMismatch("latent " + shape_to_string(latent_shape) + " not divisible by patch " +
                        std::to_string(config.patch));
  }
  if (!(config.spectral_norm > 0.0) || config.drift_scale < 0.0 || config.cond_bias_scale < 0.0 ||
      config.attention_gain < 0.0) {
    throw InvalidParam("toy field scales must be non-negative and spectral_norm positive");
  }
  if (config.text_tokens == 0 || config.text_dim == 0 || config.shared_dim == 0) {
    throw InvalidParam("toy field text tokens, text width and shared width must be positive");
  }
  token_grid_ = {latent_shape[1], latent_shape[2] / config.patch, latent_shape[3] / config.patch};

  SeededRng rng(config.seed);
  drift_matrix_ = gaussian_matrix(rng, n, n, 1.0 / std::sqrt(static_cast<double>(n)));
  const double sigma = estimate_spectral_norm(drift_matrix_, rng);
  for (float& v : drift_matrix_.data()) v = static_cast<float>(v * (config.spectral_norm / sigma));

  drift_.resize(n);
  cond_bias_.resize(n);
  for (float& v : drift_) v = static_cast<float>(rng.next_normal() * config.drift_scale);
  for (float& v : cond_bias_) v = static_cast<float>(rng.next_normal() * config.cond_bias_scale);

  text_features_ = gaussian_matrix(rng, config.text_tokens, config.text_dim, 1.0);
  const std::size_t d = config.shared_dim;
  const std::size_t depth = config.mmdit_layers + config.single_layers;
  // 1/L keeps the residual stack within a factor of about e of its input.
  const double output_scale = 1.0 / (std::sqrt(static_cast<double>(d)) * static_cast<double>(std::max<std::size_t>(depth, 1)));
  layers_.reserve(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    Layer layer;
    layer.projections = ProjectionSet::random(rng, config.text_dim, visual_dim(), d);
    layer.output = gaussian_matrix(rng, d, visual_dim(), output_scale);
    layers_.push_back(std::move(layer));
  }
}

FieldLayout ToyField::layout() const {
  return FieldLayout{config_.mmdit_layers, config_.single_layers, token_grid_};
}

void ToyField::set_text_features(Matrix features) {
  if (features.rows() != config_.text_tokens || features.cols() != config_.text_dim) {
    throw ShapeMismatch("text features must be " + std::to_string(config_.text_tokens) + "x" +
                        std::to_string(config_.text_dim));
  }
  text_features_ = std::move(features);
}

Matrix ToyField::patchify(const Tensor& z) const {
  if (z.shape() != latent_shape_) {
    throw ShapeMismatch("latent " + shape_to_string(z.shape()) + " does not match field " +
                        shape_to_string(latent_shape_));
  }
  const std::size_t c_n = latent_shape_[0], f_n = latent_shape_[1], h = latent_shape_[2], w = latent_shape_[3];
  const std::size_t p = config_.patch, th = token_grid_[1], tw = token_grid_[2];
  Matrix tokens(f_n * th * tw, visual_dim());
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t f = 0; f < f_n; ++f)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t token = (f * th + y / p) * tw + x / p;
          const std::size_t feature = (c * p + y % p) * p + x % p;
          tokens(token, feature) = z[((c * f_n + f) * h + y) * w + x];
        }
  return tokens;
}

Tensor ToyField::unpatchify(const Matrix& tokens) const {
  const std::size_t c_n = latent_shape_[0], f_n = latent_shape_[1], h = latent_shape_[2], w = latent_shape_[3];
  const std::size_t p = config_.patch, th = token_grid_[1], tw = token_grid_[2];
  if (tokens.rows() != f_n * th * tw || tokens.cols() != visual_dim()) {
    throw ShapeMismatch("token matrix does not match the field's token grid");
  }
  Tensor z(latent_shape_);
  for (std::size_t c = 0; c < c_n; ++c)
    for (std::size_t f = 0; f < f_n; ++f)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t token = (f * th + y / p) * tw + x / p;
          const std::size_t feature = (c * p + y % p) * p + x % p;
          z[((c * f_n + f) * h + y) * w + x] = tokens(token, feature);
        }
  return z;
}

Tensor ToyField::evaluate(const Tensor& z, double t, Guidance guidance, LayerObserver* observer) const {
  Matrix h = patchify(z);
  const std::size_t n = z.size();

  Tensor v(latent_shape_);
  const bool conditional = guidance == Guidance::kConditional;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    const auto row = drift_matrix_.row(i);
    for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(row[j]) * z[j];
    s += t * drift_[i];
    if (conditional) s += cond_bias_[i];
    v[i] = static_cast<float>(s);
  }

  if (layers_.empty() || (observer == nullptr && config_.attention_gain == 0.0)) return v;

  const Matrix text = conditional ? text_features_ : Matrix(config_.text_tokens, config_.text_dim);
  const Matrix h0 = h;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    QkvSet qkv = project_qkv(text, h, layers_[l].projections);
    const KeyScaling* scaling = nullptr;
    if (observer != nullptr) {
      LayerTensors tensors{qkv.text_query, qkv.text_key, qkv.visual_query, qkv.visual_key, qkv.visual_value};
      observer->on_layer(l, tensors);
      scaling = observer->scaling(l);
    }
    const Matrix rows = visual_attention_rows(qkv.visual_query, qkv.text_key, qkv.visual_key, scaling);
    const Matrix mixed = matmul(rows, vstack(qkv.text_value, qkv.visual_value));
    const Matrix update = matmul(mixed, layers_[l].output);
    for (std::size_t i = 0; i < h.data().size(); ++i) h.data()[i] += update.data()[i];
  }

  if (config_.attention_gain != 0.0) {
    for (std::size_t i = 0; i < h.data().size(); ++i) h.data()[i] -= h0.data()[i];
    const Tensor residual = unpatchify(h);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = static_cast<float>(static_cast<double>(v[i]) + config_.attention_gain * residual[i]);
    }
  }
  return v;
}

}  // namespace wiper
