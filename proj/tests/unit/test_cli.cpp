#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "generators.hpp"
#include "oracles.hpp"
#include "wiper/metrics.hpp"
#include "wiper/wtsr.hpp"

namespace wiper {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunResult {
  int code = 0;
  std::string out;
  std::string err;
};

RunResult run(std::initializer_list<std::string> args) {
  std::vector<std::string> words{"wiper"};
  words.insert(words.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& w : words) argv.push_back(w.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Scoped by test name: ctest runs each test in its own process, concurrently.
fs::path fresh_dir(const std::string& name) {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const std::string scope = info != nullptr ? std::string(info->name()) + "_" : "";
  const fs::path dir = fs::temp_directory_path() / ("wiper_cli_" + scope + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  return json::parse(in);
}

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Fixtures are shared by every test that needs them; generation is deterministic.
const fs::path& fixtures() {
  static const fs::path dir = [] {
    const fs::path d = fresh_dir("fixtures");
    const RunResult r = run({"--quiet", "fixtures", "--out", d.string()});
    if (r.code != 0) throw std::runtime_error("fixtures failed: " + r.err);
    return d;
  }();
  return dir;
}

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, cli::kExitOk);
  EXPECT_EQ(run({}).code, cli::kExitInput);
  EXPECT_EQ(run({"fixtures"}).code, cli::kExitInput);  // --out is required
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitInput);
  EXPECT_EQ(run({"--threads", "0", "validate", "x"}).code, cli::kExitInput);
}

TEST(Cli, FixturesWriteEveryArtifact) {
  const fs::path& d = fixtures();
  for (const char* name : {"latent.wtsr", "latent.wtsr.json", "text_features.wtsr", "object_mask.wtsr", "empty_mask.wtsr",
                           "effect_truth.wtsr", "queries.json", "simulate.json", "noedit.json", "blowup.json",
                           "attention/manifest.json"}) {
    EXPECT_TRUE(fs::exists(d / name)) << name;
  }
  const RunResult r = run({"fixtures", "--out", fresh_dir("fixtures_line").string()});
  ASSERT_EQ(r.code, 0);
  const json line = json::parse(r.out);
  EXPECT_EQ(line["event"], "fixtures");
  EXPECT_EQ(line["latent_hash"], "cff2d5c469cf83a5");
}

TEST(Cli, FixturesAreByteDeterministic) {
  const fs::path again = fresh_dir("fixtures_again");
  ASSERT_EQ(run({"--quiet", "fixtures", "--out", again.string()}).code, 0);
  for (const char* name : {"latent.wtsr", "object_mask.wtsr", "simulate.json", "attention/manifest.json"}) {
    EXPECT_EQ(read_bytes(fixtures() / name), read_bytes(again / name)) << name;
  }
}

TEST(Cli, LocalizeRecoversPlantedEffectRegion) {
  const fs::path out = fresh_dir("localize");
  const fs::path& d = fixtures();
  const RunResult r = run({"--quiet", "localize", "--attn", (d / "attention").string(), "--queries",
                           (d / "queries.json").string(), "--pgm", "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = read_json(out / "localize.json");
  EXPECT_EQ(report["effect_mask_hash"], "f5d8ea0ba66742e5");
  EXPECT_EQ(report["effect_tokens"], 18);
  EXPECT_LT(report["max_row_sum_deviation"].get<double>(), 1e-5);
  EXPECT_TRUE(fs::exists(out / "effect_mask.pgm"));

  const MaskGrid effect = MaskGrid::from_tensor(Resolution::kToken, load_tensor(out / "effect_mask.wtsr"));
  const MaskGrid truth = MaskGrid::from_tensor(Resolution::kToken, load_tensor(d / "effect_truth.wtsr"));
  EXPECT_TRUE(is_subset(truth, effect));
}

TEST(Cli, LocalizeInputErrors) {
  const fs::path out = fresh_dir("localize_errors");
  const fs::path& d = fixtures();
  EXPECT_EQ(run({"--quiet", "localize", "--attn", (out / "missing").string(), "--query-tokens", "0", "--out",
                 out.string()})
                .code,
            cli::kExitInput);
  EXPECT_EQ(run({"--quiet", "localize", "--attn", (d / "attention").string(), "--out", out.string()}).code,
            cli::kExitInput);  // no queries
  EXPECT_EQ(run({"--quiet", "localize", "--attn", (d / "attention").string(), "--query-tokens", "0", "--timesteps",
                 "99", "--out", out.string()})
                .code,
            cli::kExitInput);
}

TEST(Cli, SimulateNeutralConfigReconstructsWithinTolerance) {
  const fs::path out = fresh_dir("noedit");
  const fs::path& d = fixtures();
  const RunResult r = run({"--quiet", "simulate", "--latent", (d / "latent.wtsr").string(), "--object-mask",
                           (d / "empty_mask.wtsr").string(), "--config", (d / "noedit.json").string(), "--out",
                           out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = read_json(out / "report.json");
  EXPECT_EQ(report["removal_tokens"], 0);
  EXPECT_EQ(report["within_tolerance"], true);
  EXPECT_LT(report["reconstruction_error"].get<double>(), 5e-3);
}

TEST(Cli, SimulateBlowupExitsWithNumericalCode) {
  const fs::path out = fresh_dir("blowup");
  const fs::path& d = fixtures();
  const RunResult r = run({"--quiet", "simulate", "--latent", (d / "latent.wtsr").string(), "--object-mask",
                           (d / "object_mask.wtsr").string(), "--config", (d / "blowup.json").string(), "--out",
                           out.string()});
  EXPECT_EQ(r.code, cli::kExitNumerical) << r.err;
  EXPECT_NE(r.err.find("numerical"), std::string::npos);
}

TEST(Cli, SimulateRejectsBadInputs) {
  const fs::path out = fresh_dir("simulate_errors");
  const fs::path& d = fixtures();
  {
    std::ofstream cfg(out / "typo.json");
    cfg << R"({"total_stepz": 25})";
  }
  EXPECT_EQ(run({"--quiet", "simulate", "--latent", (d / "latent.wtsr").string(), "--object-mask",
                 (d / "object_mask.wtsr").string(), "--config", (out / "typo.json").string(), "--out", out.string()})
                .code,
            cli::kExitInput);
  {
    std::ofstream bad(out / "bad.wtsr", std::ios::binary);
    bad << "WTSX";
  }
  EXPECT_EQ(run({"--quiet", "simulate", "--latent", (out / "bad.wtsr").string(), "--object-mask",
                 (d / "object_mask.wtsr").string(), "--config", (d / "simulate.json").string(), "--out", out.string()})
                .code,
            cli::kExitInput);
  // A token mask where a pixel mask is expected is caught by the sidecar resolution tag.
  EXPECT_EQ(run({"--quiet", "simulate", "--latent", (d / "latent.wtsr").string(), "--object-mask",
                 (d / "effect_truth.wtsr").string(), "--config", (d / "simulate.json").string(), "--out",
                 out.string()})
                .code,
            cli::kExitInput);
}

TEST(Cli, SimulateOutputIsDeterministic) {
  const fs::path& d = fixtures();
  std::vector<std::string> hashes;
  for (const char* name : {"sim_a", "sim_b"}) {
    const fs::path out = fresh_dir(name);
    const RunResult r = run({"simulate", "--latent", (d / "latent.wtsr").string(), "--object-mask",
                             (d / "object_mask.wtsr").string(), "--effect-mask", (d / "effect_truth.wtsr").string(),
                             "--config", (d / "simulate.json").string(), "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    hashes.push_back(read_json(out / "report.json")["output_hash"]);
    std::istringstream lines(r.out);
    std::string line, last;
    std::size_t steps = 0;
    while (std::getline(lines, line)) {
      if (json::parse(line)["event"] == "step") ++steps;
      last = line;
    }
    EXPECT_EQ(steps, 50u);
    EXPECT_EQ(json::parse(last)["event"], "simulate");
  }
  EXPECT_EQ(hashes[0], hashes[1]);
}

struct MetricFiles {
  fs::path in_emb, out_emb, masks, empty, video_in, video_out;
};

MetricFiles write_metric_files(const fs::path& dir) {
  SeededRng rng(9);
  const Tensor in = testing::random_embeddings(rng, 3, 4, 4, 16);
  const Tensor out = testing::random_embeddings(rng, 3, 4, 4, 16);
  MetricFiles f{dir / "in.wtsr", dir / "out.wtsr", dir / "masks.wtsr", dir / "empty.wtsr", dir / "vin.wtsr",
                dir / "vout.wtsr"};
  save_tensor(in, f.in_emb);
  save_tensor(out, f.out_emb);
  MaskGrid masks = MaskGrid::zeros(Resolution::kPixel, {3, 64, 64});
  for (std::size_t fr = 0; fr < 3; ++fr)
    for (std::size_t y = 16; y < 32; ++y)
      for (std::size_t x = 16; x < 40; ++x) masks.set((fr * 64 + y) * 64 + x, true);
  save_tensor(masks.to_tensor(), f.masks);
  save_tensor(MaskGrid::zeros(Resolution::kPixel, {3, 64, 64}).to_tensor(), f.empty);
  Tensor vin({3, 64, 64}, 100.0f), vout({3, 64, 64}, 100.0f);
  for (std::size_t i = 0; i < vout.size(); ++i)
    if (masks[i]) vout[i] = 200.0f;
  save_tensor(vin, f.video_in);
  save_tensor(vout, f.video_out);
  return f;
}

TEST(Cli, ToksimReportMatchesOracle) {
  const fs::path dir = fresh_dir("toksim");
  const MetricFiles f = write_metric_files(dir);
  const RunResult r = run({"--quiet", "toksim", "--input-emb", f.in_emb.string(), "--output-emb", f.out_emb.string(),
                           "--masks", f.masks.string(), "--report", (dir / "report.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = read_json(dir / "report.json");
  const MaskGrid tokens =
      pool_frame_masks(MaskGrid::from_tensor(Resolution::kPixel, load_tensor(f.masks)), 16);
  const oracle::TokSimOracle expect =
      oracle::toksim(load_tensor(f.in_emb), load_tensor(f.out_emb), tokens, neighbourhood_radius(24, 16));
  EXPECT_NEAR(report["score"].get<double>(), expect.score, 1e-6);
  EXPECT_EQ(report["counted_terms"], expect.counted);
  EXPECT_EQ(report["skipped_tokens"], expect.skipped);
  EXPECT_EQ(report["neighbourhood_radius"], 2);
}

TEST(Cli, MetricsReportAndUndefinedCases) {
  const fs::path dir = fresh_dir("metrics");
  const MetricFiles f = write_metric_files(dir);
  const RunResult r = run({"metrics", "--input-video", f.video_in.string(), "--output-video", f.video_out.string(),
                           "--masks", f.masks.string(), "--input-emb", f.in_emb.string(), "--output-emb",
                           f.out_emb.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const json line = json::parse(r.out);
  EXPECT_EQ(line["bg_psnr"], "identical");  // only masked pixels differ
  EXPECT_DOUBLE_EQ(line["fg_flicker"].get<double>(), 0.0);
  EXPECT_TRUE(line.contains("toksim"));

  EXPECT_EQ(run({"--quiet", "toksim", "--input-emb", f.in_emb.string(), "--output-emb", f.out_emb.string(), "--masks",
                 f.empty.string()})
                .code,
            cli::kExitMetricUndefined);
  EXPECT_EQ(run({"--quiet", "metrics", "--input-video", f.video_in.string(), "--output-video", f.video_out.string(),
                 "--masks", f.empty.string()})
                .code,
            cli::kExitMetricUndefined);  // flicker has no masked pair
  EXPECT_EQ(run({"--quiet", "metrics", "--input-video", f.video_in.string(), "--output-video", f.video_out.string(),
                 "--masks", f.masks.string(), "--input-emb", f.in_emb.string()})
                .code,
            cli::kExitInput);
}

TEST(Cli, ValidateReportsEachPath) {
  const fs::path dir = fresh_dir("validate");
  const fs::path& d = fixtures();
  const RunResult ok = run({"validate", (d / "latent.wtsr").string(), (d / "attention").string()});
  EXPECT_EQ(ok.code, cli::kExitOk) << ok.out;
  EXPECT_EQ(std::count(ok.out.begin(), ok.out.end(), '\n'), 2);

  std::string bytes = read_bytes(d / "latent.wtsr");
  bytes.resize(bytes.size() - 3);
  {
    std::ofstream cut(dir / "cut.wtsr", std::ios::binary);
    cut << bytes;
  }
  const RunResult bad = run({"validate", (d / "latent.wtsr").string(), (dir / "cut.wtsr").string()});
  EXPECT_EQ(bad.code, cli::kExitInput);
  std::istringstream lines(bad.out);
  std::string first, second;
  std::getline(lines, first);
  std::getline(lines, second);
  EXPECT_EQ(json::parse(first)["ok"], true);
  EXPECT_EQ(json::parse(second)["ok"], false);
  EXPECT_EQ(run({"--quiet", "validate", (dir / "nope.wtsr").string()}).code, cli::kExitInput);
}

}  // namespace
}  // namespace wiper
