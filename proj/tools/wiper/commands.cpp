#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "run_config.hpp"
#include "wiper/attention_dump.hpp"
#include "wiper/error.hpp"
#include "wiper/flow_editor.hpp"
#include "wiper/localizer.hpp"
#include "wiper/metrics.hpp"
#include "wiper/rng.hpp"
#include "wiper/toy_scene.hpp"
#include "wiper/wtsr.hpp"

namespace wiper::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::size_t kPgmCell = 8;

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidParam(path.string() + " is not valid JSON: " + e.what());
  }
}

/// Loads a binary mask, checking the sidecar's resolution tag when one exists.
MaskGrid load_mask(const fs::path& path, Resolution resolution) {
  const Tensor t = load_tensor(path);
  if (const auto manifest = read_manifest(path); manifest && manifest->resolution) {
    if (resolution_from_string(*manifest->resolution) != resolution) {
      throw ShapeMismatch(path.string() + ": expected a " + std::string(to_string(resolution)) + " mask, sidecar says " +
                          *manifest->resolution);
    }
  }
  return MaskGrid::from_tensor(resolution, t);
}

void save_mask(const MaskGrid& m, const fs::path& path, const std::string& role) {
  save_tensor_with_manifest(m.to_tensor(), path, role, std::string(to_string(m.resolution())));
}

/// Frames of a rank-3 map side by side, each cell upscaled, min-max normalized to 8-bit gray.
void write_pgm(const Tensor& map, const fs::path& path) {
  const std::size_t f_n = map.dim(0), h = map.dim(1), w = map.dim(2);
  const auto [lo_it, hi_it] = std::minmax_element(map.values().begin(), map.values().end());
  const double lo = *lo_it, span = *hi_it - *lo_it;
  const std::size_t width = f_n * w * kPgmCell + (f_n - 1), height = h * kPgmCell;
  std::vector<std::uint8_t> pixels(width * height, 128);
  for (std::size_t f = 0; f < f_n; ++f)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < w * kPgmCell; ++x) {
        const double v = map[(f * h + y / kPgmCell) * w + x / kPgmCell];
        const double g = span > 0.0 ? (v - lo) / span : 0.0;
        pixels[y * width + f * (w * kPgmCell + 1) + x] = static_cast<std::uint8_t>(std::lround(g * 255.0));
      }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

json toksim_json(const TokSimReport& r, std::size_t radius) {
  json pairs = json::array();
  for (const auto& p : r.pairs) {
    pairs.push_back({{"frame", p.frame},
                     {"object_tokens", p.object_tokens},
                     {"counted_tokens", p.counted_tokens},
                     {"mean_lambda", p.mean_lambda},
                     {"mean_eta", p.mean_eta},
                     {"mean_tau", p.mean_tau}});
  }
  return {{"score", r.score},
          {"counted_terms", r.counted_terms},
          {"skipped_tokens", r.skipped_tokens},
          {"neighbourhood_radius", radius},
          {"pairs", std::move(pairs)}};
}

/// Token masks for an embedding grid: used as-is when the shape matches, otherwise pooled per frame.
MaskGrid masks_for_grid(const MaskGrid& masks, const Shape& grid, std::size_t patch) {
  if (masks.shape() == grid) return MaskGrid(Resolution::kToken, masks.shape(), {masks.values().begin(), masks.values().end()});
  const MaskGrid pooled = pool_frame_masks(masks, patch);
  if (pooled.shape() != grid) {
    throw ShapeMismatch("masks " + shape_to_string(masks.shape()) + " do not pool onto embedding grid " +
                        shape_to_string(grid) + " with patch " + std::to_string(patch));
  }
  return pooled;
}

std::vector<std::size_t> read_queries(const fs::path& path) {
  const json j = read_json(path);
  if (!j.is_object()) throw InvalidParam(path.string() + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key != "query_tokens") throw InvalidParam("unknown key '" + key + "' in " + path.string());
  }
  try {
    return j.at("query_tokens").get<std::vector<std::size_t>>();
  } catch (const json::exception&) {
    throw InvalidParam(path.string() + ": query_tokens must be a list of non-negative integers");
  }
}

json diagnostics_json(const StepDiagnostics& d) {
  return {{"event", "step"},       {"pass", d.pass},
          {"step", d.step},        {"t", d.t},
          {"max_abs", d.max_abs},  {"scaled", d.scaled},
          {"cache_writes", d.cache_writes}, {"cache_hits", d.cache_hits},
          {"copied_rows", d.copied_rows},   {"masked_tokens", d.masked_tokens}};
}

/// ||a - b|| / ||b|| over entries where the mask is clear; nullopt when nothing is clear.
std::optional<double> background_error(const Tensor& a, const Tensor& b, const MaskGrid& mask) {
  double diff = 0.0, ref = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (mask[i]) continue;
    const double d = static_cast<double>(a[i]) - b[i];
    diff += d * d;
    ref += static_cast<double>(b[i]) * b[i];
    ++count;
  }
  if (count == 0 || ref == 0.0) return std::nullopt;
  return std::sqrt(diff / ref);
}

json validate_file(const fs::path& path) {
  const Tensor t = load_tensor(path);
  json result{{"shape", t.shape()}, {"hash", content_hash(t)}};
  const auto manifest = read_manifest(path);
  if (!manifest) return result;
  if (manifest->shape != t.shape()) {
    throw ShapeMismatch(path.string() + ": sidecar shape " + shape_to_string(manifest->shape) + " but file holds " +
                        shape_to_string(t.shape()));
  }
  result["role"] = manifest->role;
  if (manifest->resolution) {
    const Resolution r = resolution_from_string(*manifest->resolution);
    static_cast<void>(MaskGrid::from_tensor(r, t));
    result["resolution"] = *manifest->resolution;
  }
  if (manifest->role == "embedding") static_cast<void>(EmbeddingVideo(t, 1));
  return result;
}

json validate_dump(const fs::path& dir, double tolerance) {
  const AttentionDumpManifest manifest = read_attention_manifest(dir);
  for (const auto& e : manifest.entries) {
    for (const std::string& file : {e.query_file, e.key_file, e.attention_file}) {
      if (!file.empty() && !fs::exists(dir / file)) throw Error(dir.string() + ": missing dump file " + file);
    }
  }
  const auto loaded = load_attention_dump(dir, manifest, {}, {});
  double worst = 0.0;
  for (const auto& l : loaded) worst = std::max(worst, max_row_sum_deviation(l.maps));
  if (worst > tolerance) {
    throw InvalidParam(dir.string() + ": attention row sums deviate from 1 by " + std::to_string(worst));
  }
  return {{"entries", manifest.entries.size()}, {"max_row_sum_deviation", worst}};
}

}  // namespace

void Diagnostics::emit(const json& record) const {
  if (quiet_) return;
  out_ << record.dump() << "\n";
}

int run_fixtures(const FixturesOptions& options, const Diagnostics& diag) {
  fs::create_directories(options.out);
  ToySceneConfig scene_config;
  scene_config.seed = options.seed;
  scene_config.field.seed = options.seed;
  const ToyScene scene = make_toy_scene(scene_config);

  save_tensor_with_manifest(scene.latent, options.out / "latent.wtsr", "latent");
  save_tensor_with_manifest(scene.text_features.to_tensor(), options.out / "text_features.wtsr", "text_features");
  save_mask(scene.object_pixels, options.out / "object_mask.wtsr", "object_mask");
  save_mask(MaskGrid::zeros(Resolution::kPixel, scene.object_pixels.shape()), options.out / "empty_mask.wtsr",
            "object_mask");
  save_mask(scene.effect_tokens, options.out / "effect_truth.wtsr", "effect_mask");
  const AttentionDumpManifest dump =
      write_toy_attention_dump(scene, options.out / "attention", kDefaultLocalizationTimesteps);
  write_json(options.out / "queries.json", {{"query_tokens", scene.config.query_tokens}});

  RunConfig config;
  config.seed = options.seed;
  config.text_features = "text_features.wtsr";
  config.field = scene.config.field;
  write_json(options.out / "simulate.json", to_json(config));

  RunConfig noedit = config;
  noedit.schedule.cfg_denoise = noedit.schedule.cfg_invert;
  noedit.schedule.c = 1.0f;
  noedit.schedule.b = 1.0f;
  write_json(options.out / "noedit.json", to_json(noedit));

  RunConfig blowup = config;
  blowup.field.spectral_norm = 1e6;
  write_json(options.out / "blowup.json", to_json(blowup));

  diag.emit({{"event", "fixtures"},
             {"out", options.out.generic_string()},
             {"seed", options.seed},
             {"latent_hash", content_hash(scene.latent)},
             {"attention_entries", dump.entries.size()}});
  return kExitOk;
}

int run_localize(const LocalizeOptions& options, const Diagnostics& diag) {
  const AttentionDumpManifest manifest = read_attention_manifest(options.attention_dir);
  std::vector<std::size_t> queries = options.query_tokens;
  if (options.queries_file) {
    const auto from_file = read_queries(*options.queries_file);
    queries.insert(queries.end(), from_file.begin(), from_file.end());
  }
  if (queries.empty()) throw InvalidParam("no query tokens given (use --queries or --query-tokens)");

  const auto loaded = load_attention_dump(options.attention_dir, manifest, options.timesteps, options.layers,
                                          AttentionOptions{options.block_softmax});
  if (loaded.empty()) throw InvalidParam("no dumped layers match the selected timesteps and layers");
  std::vector<JointAttentionMaps> maps;
  maps.reserve(loaded.size());
  double worst_row_sum = 0.0;
  for (const auto& l : loaded) {
    worst_row_sum = std::max(worst_row_sum, max_row_sum_deviation(l.maps));
    maps.push_back(l.maps);
  }

  LocalizerOptions lo;
  lo.fixed_threshold = options.threshold;
  if (options.seed_mask) lo.seed_mask = load_mask(*options.seed_mask, Resolution::kToken);
  const Localization loc = localize_effects(maps, queries, manifest.token_grid, lo);

  fs::create_directories(options.out);
  save_mask(loc.effect_mask, options.out / "effect_mask.wtsr", "effect_mask");
  save_mask(loc.proposal.mask, options.out / "proposal.wtsr", "proposal_mask");
  save_tensor_with_manifest(loc.relevance.values, options.out / "relevance.wtsr", "relevance_map");
  save_tensor_with_manifest(loc.response.values, options.out / "response.wtsr", "response_map");
  if (options.pgm) {
    write_pgm(loc.relevance.values, options.out / "relevance.pgm");
    write_pgm(loc.proposal.mask.to_tensor(), options.out / "proposal.pgm");
    write_pgm(loc.response.values, options.out / "response.pgm");
    write_pgm(loc.effect_mask.to_tensor(), options.out / "effect_mask.pgm");
  }

  const json report{{"effect_mask_hash", content_hash(loc.effect_mask.to_tensor())},
                    {"effect_tokens", loc.effect_mask.count()},
                    {"proposal_tokens", loc.proposal.mask.count()},
                    {"proposal_bin", loc.proposal.bin},
                    {"proposal_threshold", loc.proposal.threshold},
                    {"refine_threshold", loc.refine_threshold},
                    {"maps_used", maps.size()},
                    {"max_row_sum_deviation", worst_row_sum},
                    {"token_grid", manifest.token_grid}};
  write_json(options.out / "localize.json", report);
  json line = report;
  line["event"] = "localize";
  diag.emit(line);
  return kExitOk;
}

int run_simulate(const SimulateOptions& options, const Diagnostics& diag) {
  const RunConfig config = load_run_config(options.config);
  const Tensor z0 = load_tensor(options.latent);
  if (z0.rank() != 4) throw ShapeMismatch("latent must be [C, F', H, W], got " + shape_to_string(z0.shape()));
  if (config.field.patch != 2) {
    throw InvalidParam("simulate needs field.patch = 2 so that tokens cover 16 pixels");
  }
  const MaskGrid object_pixels = load_mask(options.object_mask, Resolution::kPixel);
  std::optional<MaskGrid> effect;
  if (options.effect_mask) effect = load_mask(*options.effect_mask, Resolution::kToken);

  ToyField field(z0.shape(), config.field);
  if (config.text_features) field.set_text_features(Matrix::from_tensor(load_tensor(*config.text_features)));
  const FieldLayout layout = field.layout();

  const MaskGrid object_tokens = to_token(object_pixels, kTokenPatch);
  if (object_tokens.shape() != layout.token_grid) {
    throw ShapeMismatch("object mask pools to " + shape_to_string(object_tokens.shape()) + ", latent token grid is " +
                        shape_to_string(layout.token_grid));
  }
  const MaskGrid effect_tokens = effect ? *effect : MaskGrid::zeros(Resolution::kToken, layout.token_grid);
  const MaskGrid latent_mask = removal_latent_mask(object_pixels, effect, z0.dim(0), config.field.patch);
  if (latent_mask.shape() != z0.shape()) {
    throw ShapeMismatch("object mask maps to latent " + shape_to_string(latent_mask.shape()) + ", latent is " +
                        shape_to_string(z0.shape()));
  }

  EditSession session = invert(z0, field, config.schedule, object_tokens, effect_tokens);
  SeededRng rng(config.seed);
  const Tensor start = reinitialize(session, rng, latent_mask);
  const Tensor edited = denoise(session, start, field);

  for (const auto& d : session.diagnostics) diag.emit(diagnostics_json(d));

  fs::create_directories(options.out);
  save_tensor_with_manifest(edited, options.out / "edited.wtsr", "latent");
  if (options.save_masks) session.adaptive.save(options.out / "adaptive_masks");

  const auto error = background_error(edited, z0, latent_mask);
  json report{{"output_hash", content_hash(edited)},
              {"inverted_hash", content_hash(session.inverted())},
              {"removal_tokens", session.removal_tokens().count()},
              {"latent_mask_cells", latent_mask.count()},
              {"cache_entries", session.values.size()},
              {"adaptive_masks", session.adaptive.size()},
              {"copy_events", session.copy_events.size()},
              {"reconstruction_tolerance", config.reconstruction_tolerance},
              {"seed", config.seed}};
  if (error) {
    report["reconstruction_error"] = *error;
    report["within_tolerance"] = *error <= config.reconstruction_tolerance;
  } else {
    report["reconstruction_error"] = nullptr;
    report["within_tolerance"] = nullptr;
  }
  write_json(options.out / "report.json", report);
  json line = report;
  line["event"] = "simulate";
  diag.emit(line);
  return kExitOk;
}

int run_toksim(const ToksimOptions& options, const Diagnostics& diag) {
  const EmbeddingVideo input(load_tensor(options.input_emb), options.patch);
  const EmbeddingVideo output(load_tensor(options.output_emb), options.patch);
  const MaskGrid masks = masks_for_grid(load_mask(options.masks, Resolution::kPixel), output.grid(), options.patch);
  const TokSimReport r = toksim(input, output, masks, options.radius_px);
  json report = toksim_json(r, neighbourhood_radius(options.radius_px, options.patch));
  if (options.report) write_json(*options.report, report);
  report["event"] = "toksim";
  diag.emit(report);
  return kExitOk;
}

int run_metrics(const MetricsOptions& options, const Diagnostics& diag) {
  const Tensor in = load_tensor(options.input_video);
  const Tensor out = load_tensor(options.output_video);
  MaskGrid masks = load_mask(options.masks, Resolution::kPixel);
  if (options.effect_mask) masks = expand_with_effects(masks, load_mask(*options.effect_mask, Resolution::kToken));
  if (options.input_emb.has_value() != options.output_emb.has_value()) {
    throw InvalidParam("TokSim needs both --input-emb and --output-emb");
  }

  json report;
  const PsnrResult psnr = bg_psnr(in, out, masks);
  if (psnr.identical) {
    report["bg_psnr"] = "identical";
  } else {
    report["bg_psnr"] = psnr.db;
  }
  report["fg_flicker"] = fg_flicker(out, masks);
  if (options.input_emb) {
    const EmbeddingVideo ein(load_tensor(*options.input_emb), options.patch);
    const EmbeddingVideo eout(load_tensor(*options.output_emb), options.patch);
    const MaskGrid token_masks = masks_for_grid(masks, eout.grid(), options.patch);
    report["toksim"] = toksim_json(toksim(ein, eout, token_masks, options.radius_px),
                                   neighbourhood_radius(options.radius_px, options.patch));
  }
  if (options.report) write_json(*options.report, report);
  report["event"] = "metrics";
  diag.emit(report);
  return kExitOk;
}

int run_validate(const ValidateOptions& options, const Diagnostics& diag) {
  if (options.paths.empty()) throw InvalidParam("nothing to validate");
  int code = kExitOk;
  for (const auto& path : options.paths) {
    json line{{"event", "validate"}, {"path", path.generic_string()}};
    try {
      if (!fs::exists(path)) throw Error("no such file or directory");
      const json detail = fs::is_directory(path) ? validate_dump(path, options.row_sum_tolerance) : validate_file(path);
      line.update(detail);
      line["ok"] = true;
    } catch (const Error& e) {
      line["ok"] = false;
      line["error"] = e.what();
      code = kExitInput;
    }
    diag.emit(line);
  }
  return code;
}

}  // namespace wiper::cli
