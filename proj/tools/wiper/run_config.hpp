#pragma once

#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "wiper/flow_editor.hpp"
#include "wiper/toy_field.hpp"

namespace wiper::cli {

/// `wiper simulate` configuration. Every key is optional; unknown keys are rejected.
///
///   { "seed": 42, "reconstruction_tolerance": 0.01, "text_features": "text_features.wtsr",
///     "field": { ToyFieldConfig keys }, "schedule": { ScheduleConfig keys } }
///
/// `text_features` is resolved relative to the config file.
struct RunConfig {
  std::uint64_t seed = 42;
  double reconstruction_tolerance = 1e-2;
  std::optional<std::filesystem::path> text_features;
  ToyFieldConfig field;
  ScheduleConfig schedule;
};

/// Throws InvalidParam on unknown keys or mistyped values.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const RunConfig& config);

}  // namespace wiper::cli
