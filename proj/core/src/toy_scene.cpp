#include "wiper/toy_scene.hpp"

#include <cmath>
#include <string>

#include "wiper/error.hpp"
#include "wiper/rng.hpp"
#include "wiper/wtsr.hpp"

namespace wiper {
namespace {

constexpr int kEigenIterations = 200;

// Captures the joint Q/K of the MMDiT layers for one conditional evaluation.
class QkCapture final : public LayerObserver {
 public:
  explicit QkCapture(std::size_t mmdit_layers) : query_(mmdit_layers), key_(mmdit_layers) {}

  void on_layer(std::size_t layer, LayerTensors& t) override {
    if (layer >= query_.size()) return;
    query_[layer] = vstack(t.text_query, t.visual_query);
    key_[layer] = vstack(t.text_key, t.visual_key);
  }

  const Matrix& query(std::size_t layer) const { return query_.at(layer); }
  const Matrix& key(std::size_t layer) const { return key_.at(layer); }

 private:
  std::vector<Matrix> query_;
  std::vector<Matrix> key_;
};

bool is_selected(const std::vector<int>& steps, std::size_t step) {
  for (int s : steps) {
    if (s >= 0 && static_cast<std::size_t>(s) == step) return true;
  }
  return false;
}

}  // namespace

ToyField ToyScene::make_field() const {
  ToyField field(latent.shape(), config.field);
  field.set_text_features(text_features);
  return field;
}

ToyScene make_toy_scene(const ToySceneConfig& config) {
  const std::size_t p = config.field.patch;
  if (p == 0 || config.latent_height % p != 0 || config.latent_width % p != 0) {
    throw ShapeMismatch("scene latent must be divisible by the field patch");
  }
  const std::size_t frames = config.latent_frames, th = config.latent_height / p, tw = config.latent_width / p;
  if (th < 4 || tw < 2 || frames == 0) throw InvalidParam("scene needs a token grid of at least 4 x 2");
  for (std::size_t q : config.query_tokens) {
    if (q >= config.field.text_tokens) throw InvalidParam("query token " + std::to_string(q) + " out of range");
  }

  ToyScene scene;
  scene.config = config;
  const Shape grid{frames, th, tw};
  scene.object_tokens = MaskGrid::zeros(Resolution::kToken, grid);
  scene.effect_tokens = MaskGrid::zeros(Resolution::kToken, grid);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t x0 = f % (tw - 1);
    for (std::size_t x = x0; x < x0 + 2; ++x) {
      scene.object_tokens.set((f * th + 1) * tw + x, true);
      scene.object_tokens.set((f * th + 2) * tw + x, true);
      scene.effect_tokens.set((f * th + 3) * tw + x, true);
    }
  }
  scene.object_pixels = to_pixel(scene.object_tokens, kTokenPatch);

  // Plant along the top eigenvector of the MMDiT layers' summed, symmetrized W_Q^I (W_K^I)^T so
  // that planted tokens attend to each other.
  const Shape latent_shape{config.channels, frames, config.latent_height, config.latent_width};
  const ToyField base(latent_shape, config.field);
  const std::size_t dim = config.channels * p * p;
  std::vector<double> sym(dim * dim, 0.0);
  for (std::size_t l = 0; l < config.field.mmdit_layers; ++l) {
    const ProjectionSet& proj = base.projections(l);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < dim; ++j)
        for (std::size_t k = 0; k < config.field.shared_dim; ++k) {
          const double qk = static_cast<double>(proj.visual_query(i, k)) * proj.visual_key(j, k);
          sym[i * dim + j] += 0.5 * qk;
          sym[j * dim + i] += 0.5 * qk;
        }
  }
  double shift = 0.0;
  for (double v : sym) shift += v * v;
  shift = std::sqrt(shift);

  SeededRng rng(config.seed ^ 0x5ce9e5ce9e5ce9e5ULL);
  std::vector<double> direction(dim), next(dim);
  for (double& v : direction) v = rng.next_normal();
  for (int it = 0; it < kEigenIterations; ++it) {
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      double acc = shift * direction[i];
      for (std::size_t j = 0; j < dim; ++j) acc += sym[i * dim + j] * direction[j];
      next[i] = acc;
      norm += acc * acc;
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < dim; ++i) direction[i] = next[i] / norm;
  }

  scene.latent = gaussian(rng, latent_shape);
  for (std::size_t c = 0; c < config.channels; ++c)
    for (std::size_t f = 0; f < frames; ++f)
      for (std::size_t y = 0; y < config.latent_height; ++y)
        for (std::size_t x = 0; x < config.latent_width; ++x) {
          const std::size_t token = (f * th + y / p) * tw + x / p;
          const double g = direction[(c * p + y % p) * p + x % p];
          double v = config.background_scale * scene.latent.at({c, f, y, x});
          if (scene.object_tokens[token]) v += config.object_scale * g;
          if (scene.effect_tokens[token]) v += config.effect_scale * g;
          scene.latent.at({c, f, y, x}) = static_cast<float>(v);
        }

  // Query rows x maximize x W_Q^T . (g W_K^I) summed over the MMDiT layers.
  scene.text_features = base.text_features();
  std::vector<double> planted(config.field.text_dim, 0.0);
  for (std::size_t l = 0; l < config.field.mmdit_layers; ++l) {
    const ProjectionSet& proj = base.projections(l);
    std::vector<double> key(config.field.shared_dim, 0.0);
    for (std::size_t i = 0; i < dim; ++i)
      for (std::size_t k = 0; k < key.size(); ++k) key[k] += direction[i] * proj.visual_key(i, k);
    for (std::size_t r = 0; r < planted.size(); ++r)
      for (std::size_t k = 0; k < key.size(); ++k) planted[r] += proj.text_query(r, k) * key[k];
  }
  double pn = 0.0;
  for (double v : planted) pn += v * v;
  pn = std::sqrt(pn);
  for (std::size_t q : config.query_tokens) {
    for (std::size_t r = 0; r < planted.size(); ++r) {
      scene.text_features(q, r) = static_cast<float>(pn > 0.0 ? config.query_gain * planted[r] / pn : 0.0);
    }
  }
  return scene;
}

AttentionDumpManifest write_toy_attention_dump(const ToyScene& scene, const std::filesystem::path& dir,
                                               const std::vector<int>& timesteps, std::size_t total_steps) {
  if (total_steps == 0) throw InvalidParam("total_steps must be positive");
  const ToyField field = scene.make_field();
  const FieldLayout layout = field.layout();
  std::filesystem::create_directories(dir);

  AttentionDumpManifest manifest;
  manifest.text_tokens = scene.config.field.text_tokens;
  manifest.visual_tokens = layout.visual_tokens();
  manifest.dim = scene.config.field.shared_dim;
  manifest.token_grid = layout.token_grid;

  const double dt = 1.0 / static_cast<double>(total_steps);
  Tensor z = scene.latent;
  for (std::size_t i = 0; i < total_steps; ++i) {
    const double t = static_cast<double>(i) * dt;
    QkCapture capture(layout.mmdit_layers);
    const Tensor v = field.evaluate(z, t, Guidance::kConditional, &capture);
    if (is_selected(timesteps, i)) {
      for (std::size_t l = 0; l < layout.mmdit_layers; ++l) {
        const std::string stem = "t" + std::to_string(i) + "_l" + std::to_string(l);
        AttentionDumpEntry entry{static_cast<int>(i), static_cast<int>(l), stem + "_q.wtsr", stem + "_k.wtsr", ""};
        save_tensor(capture.query(l).to_tensor(), dir / entry.query_file);
        save_tensor(capture.key(l).to_tensor(), dir / entry.key_file);
        manifest.entries.push_back(std::move(entry));
      }
    }
    for (std::size_t k = 0; k < z.size(); ++k) {
      z[k] = static_cast<float>(static_cast<double>(z[k]) + dt * static_cast<double>(v[k]));
    }
  }
  write_attention_manifest(dir, manifest);
  return manifest;
}

}  // namespace wiper
