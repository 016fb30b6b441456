#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace wiper::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kExitMetricUndefined = 4;

/// JSON-lines sink for diagnostics. Silent when quiet.
class Diagnostics {
 public:
  Diagnostics(std::ostream& out, bool quiet) : out_(out), quiet_(quiet) {}
  void emit(const nlohmann::json& record) const;

 private:
  std::ostream& out_;
  bool quiet_;
};

struct FixturesOptions {
  std::filesystem::path out;
  std::uint64_t seed = 42;
};

struct LocalizeOptions {
  std::filesystem::path attention_dir;
  std::optional<std::filesystem::path> queries_file;
  std::vector<std::size_t> query_tokens;
  std::vector<int> timesteps{6, 7, 10};
  std::vector<int> layers;  // empty = every dumped layer
  std::optional<float> threshold;
  std::optional<std::filesystem::path> seed_mask;
  bool block_softmax = false;
  bool pgm = false;
  std::filesystem::path out;
};

struct SimulateOptions {
  std::filesystem::path latent;
  std::filesystem::path object_mask;
  std::optional<std::filesystem::path> effect_mask;
  std::filesystem::path config;
  std::filesystem::path out;
  bool save_masks = false;
};

struct ToksimOptions {
  std::filesystem::path input_emb;
  std::filesystem::path output_emb;
  std::filesystem::path masks;
  std::size_t patch = 16;
  std::size_t radius_px = 24;
  std::optional<std::filesystem::path> report;
};

struct MetricsOptions {
  std::filesystem::path input_video;
  std::filesystem::path output_video;
  std::filesystem::path masks;
  std::optional<std::filesystem::path> effect_mask;
  std::optional<std::filesystem::path> input_emb;
  std::optional<std::filesystem::path> output_emb;
  std::size_t patch = 16;
  std::size_t radius_px = 24;
  std::optional<std::filesystem::path> report;
};

struct ValidateOptions {
  std::vector<std::filesystem::path> paths;
  double row_sum_tolerance = 1e-3;
};

// Each command returns an exit code and throws wiper::Error subclasses on failure.
int run_fixtures(const FixturesOptions& options, const Diagnostics& diag);
int run_localize(const LocalizeOptions& options, const Diagnostics& diag);
int run_simulate(const SimulateOptions& options, const Diagnostics& diag);
int run_toksim(const ToksimOptions& options, const Diagnostics& diag);
int run_metrics(const MetricsOptions& options, const Diagnostics& diag);
int run_validate(const ValidateOptions& options, const Diagnostics& diag);

/// Full command line. Maps wiper errors to exit codes and prints messages to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wiper::cli
