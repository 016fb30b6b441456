#include "run_config.hpp"

#include <fstream>
#include <set>
#include <string>

#include "wiper/error.hpp"

namespace wiper::cli {
namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw InvalidParam(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw InvalidParam("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw InvalidParam("");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) throw InvalidParam("");
    } else {
      if (!v.is_number()) throw InvalidParam("");
    }
    out = v.get<T>();
  } catch (const std::exception&) {
    throw InvalidParam("config key '" + where + key + "' has the wrong type: " + v.dump());
  }
}

ToyFieldConfig parse_field(const json& j) {
  const std::string w = "field.";
  reject_unknown(j,
                 {"seed", "mmdit_layers", "single_layers", "text_tokens", "text_dim", "shared_dim", "patch",
                  "spectral_norm", "drift_scale", "cond_bias_scale", "attention_gain"},
                 w);
  ToyFieldConfig f;
  read(j, "seed", f.seed, w);
  read(j, "mmdit_layers", f.mmdit_layers, w);
  read(j, "single_layers", f.single_layers, w);
  read(j, "text_tokens", f.text_tokens, w);
  read(j, "text_dim", f.text_dim, w);
  read(j, "shared_dim", f.shared_dim, w);
  read(j, "patch", f.patch, w);
  read(j, "spectral_norm", f.spectral_norm, w);
  read(j, "drift_scale", f.drift_scale, w);
  read(j, "cond_bias_scale", f.cond_bias_scale, w);
  read(j, "attention_gain", f.attention_gain, w);
  return f;
}

ScheduleConfig parse_schedule(const json& j) {
  const std::string w = "schedule.";
  reject_unknown(j,
                 {"total_steps", "cache_steps", "cache_layers", "scale_steps", "c", "b", "cfg_invert",
                  "cfg_denoise", "rs_threshold", "copy_back"},
                 w);
  ScheduleConfig s;
  read(j, "total_steps", s.total_steps, w);
  read(j, "cache_steps", s.cache_steps, w);
  read(j, "cache_layers", s.cache_layers, w);
  read(j, "scale_steps", s.scale_steps, w);
  read(j, "c", s.c, w);
  read(j, "b", s.b, w);
  read(j, "cfg_invert", s.cfg_invert, w);
  read(j, "cfg_denoise", s.cfg_denoise, w);
  read(j, "rs_threshold", s.rs_threshold, w);
  read(j, "copy_back", s.copy_back, w);
  return s;
}

}  // namespace

RunConfig parse_run_config(const json& j, const std::filesystem::path& base_dir) {
  reject_unknown(j, {"seed", "reconstruction_tolerance", "text_features", "field", "schedule"}, "");
  RunConfig c;
  read(j, "seed", c.seed, "");
  read(j, "reconstruction_tolerance", c.reconstruction_tolerance, "");
  if (j.contains("text_features")) {
    if (!j.at("text_features").is_string()) throw InvalidParam("config key 'text_features' must be a path string");
    c.text_features = base_dir / j.at("text_features").get<std::string>();
  }
  if (j.contains("field")) c.field = parse_field(j.at("field"));
  if (j.contains("schedule")) c.schedule = parse_schedule(j.at("schedule"));
  if (!(c.reconstruction_tolerance > 0.0)) throw InvalidParam("reconstruction_tolerance must be positive");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidParam("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

nlohmann::json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["reconstruction_tolerance"] = c.reconstruction_tolerance;
  if (c.text_features) j["text_features"] = c.text_features->generic_string();
  const ToyFieldConfig& f = c.field;
  j["field"] = {{"seed", f.seed},
                {"mmdit_layers", f.mmdit_layers},
                {"single_layers", f.single_layers},
                {"text_tokens", f.text_tokens},
                {"text_dim", f.text_dim},
                {"shared_dim", f.shared_dim},
                {"patch", f.patch},
                {"spectral_norm", f.spectral_norm},
                {"drift_scale", f.drift_scale},
                {"cond_bias_scale", f.cond_bias_scale},
                {"attention_gain", f.attention_gain}};
  const ScheduleConfig& s = c.schedule;
  j["schedule"] = {{"total_steps", s.total_steps}, {"cache_steps", s.cache_steps}, {"cache_layers", s.cache_layers},
                   {"scale_steps", s.scale_steps}, {"c", s.c},                     {"b", s.b},
                   {"cfg_invert", s.cfg_invert},   {"cfg_denoise", s.cfg_denoise}, {"rs_threshold", s.rs_threshold},
                   {"copy_back", s.copy_back}};
  return j;
}

}  // namespace wiper::cli
