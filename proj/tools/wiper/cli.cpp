#include <CLI11.hpp>

#include "commands.hpp"
#include "wiper/error.hpp"
#include "wiper/parallel.hpp"

namespace wiper::cli {

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"wiper: effect localization, attention-guided removal simulation and removal metrics"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  bool quiet = false;
  app.add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", quiet, "Suppress JSON-lines diagnostics on stdout");

  FixturesOptions fixtures;
  auto* fx = app.add_subcommand("fixtures", "Write the seeded toy fixtures (latent, masks, attention dump, configs)");
  fx->add_option("--out", fixtures.out, "Output directory")->required();
  fx->add_option("--seed", fixtures.seed, "Scene and field seed");

  LocalizeOptions localize;
  auto* lc = app.add_subcommand("localize", "Localize object effects from dumped attention");
  lc->add_option("--attn", localize.attention_dir, "Attention dump directory (with manifest.json)")->required();
  lc->add_option("--queries", localize.queries_file, "JSON file with {\"query_tokens\": [...]}");
  lc->add_option("--query-tokens", localize.query_tokens, "Query text token indices")->delimiter(',');
  lc->add_option("--timesteps", localize.timesteps, "Inversion steps to average (default 6,7,10)")->delimiter(',');
  lc->add_option("--layers", localize.layers, "Layers to average (default: all dumped)")->delimiter(',');
  lc->add_option("--threshold", localize.threshold, "Fixed response threshold instead of Otsu");
  lc->add_option("--seed-mask", localize.seed_mask, "Token mask used as the refinement proposal");
  lc->add_flag("--block-softmax", localize.block_softmax, "Normalize each attention block separately");
  lc->add_flag("--pgm", localize.pgm, "Also write PGM visualizations of every stage");
  lc->add_option("--out", localize.out, "Output directory")->required();

  SimulateOptions simulate;
  auto* sm = app.add_subcommand("simulate", "Run inversion, reinitialization and guided denoising on a toy field");
  sm->add_option("--latent", simulate.latent, "Source latent [C, F', H, W]")->required();
  sm->add_option("--object-mask", simulate.object_mask, "Pixel object mask [F+1, H, W]")->required();
  sm->add_option("--effect-mask", simulate.effect_mask, "Token effect mask [F', H', W']");
  sm->add_option("--config", simulate.config, "Run configuration JSON")->required();
  sm->add_option("--out", simulate.out, "Output directory")->required();
  sm->add_flag("--save-masks", simulate.save_masks, "Write the adaptive masks of every cached step");

  ToksimOptions ts;
  auto* tk = app.add_subcommand("toksim", "Token similarity score from patch embeddings");
  tk->add_option("--input-emb", ts.input_emb, "Input embeddings [F, H', W', D]")->required();
  tk->add_option("--output-emb", ts.output_emb, "Output embeddings [F, H', W', D]")->required();
  tk->add_option("--masks", ts.masks, "Object masks, pixel [F, H, W] or token [F, H', W']")->required();
  tk->add_option("--patch", ts.patch, "Embedding patch size in pixels")->check(CLI::PositiveNumber);
  tk->add_option("--radius-px", ts.radius_px, "Background neighbourhood in pixels");
  tk->add_option("--report", ts.report, "Write the JSON report here");

  MetricsOptions metrics;
  auto* mt = app.add_subcommand("metrics", "Background PSNR, foreground flicker and optional token similarity");
  mt->add_option("--input-video", metrics.input_video, "Input video [F, H, W] or [C, F, H, W], values in [0, 255]")
      ->required();
  mt->add_option("--output-video", metrics.output_video, "Output video, same shape")->required();
  mt->add_option("--masks", metrics.masks, "Pixel object masks [F, H, W]")->required();
  mt->add_option("--effect-mask", metrics.effect_mask, "Token effect mask added to the object masks");
  mt->add_option("--input-emb", metrics.input_emb, "Input embeddings for token similarity");
  mt->add_option("--output-emb", metrics.output_emb, "Output embeddings for token similarity");
  mt->add_option("--patch", metrics.patch, "Embedding patch size in pixels")->check(CLI::PositiveNumber);
  mt->add_option("--radius-px", metrics.radius_px, "Background neighbourhood in pixels");
  mt->add_option("--report", metrics.report, "Write the JSON report here");

  ValidateOptions validate;
  auto* vd = app.add_subcommand("validate", "Check WTSR1 files, sidecars and attention dump directories");
  vd->add_option("paths", validate.paths, "Files or dump directories")->required();
  vd->add_option("--row-sum-tolerance", validate.row_sum_tolerance, "Allowed |row sum - 1| for dumps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitInput;
  }

  set_thread_limit(threads);
  const Diagnostics diag(out, quiet);
  try {
    if (*fx) return run_fixtures(fixtures, diag);
    if (*lc) return run_localize(localize, diag);
    if (*sm) return run_simulate(simulate, diag);
    if (*tk) return run_toksim(ts, diag);
    if (*mt) return run_metrics(metrics, diag);
    return run_validate(validate, diag);
  } catch (const NumericalBlowup& e) {
    err << "wiper: numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const MetricUndefined& e) {
    err << "wiper: metric undefined: " << e.what() << "\n";
    return kExitMetricUndefined;
  } catch (const Error& e) {
    err << "wiper: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "wiper: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace wiper::cli
