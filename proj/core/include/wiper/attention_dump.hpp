#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wiper/attention.hpp"
#include "wiper/tensor.hpp"

namespace wiper {

inline constexpr const char* kAttentionManifestName = "manifest.json";
inline constexpr const char* kAttentionDumpFormat = "wiper-attention-dump/1";

/// One dumped layer. Exactly one of (query, key) or attention is set.
struct AttentionDumpEntry {
  int timestep = 0;
  int layer = 0;
  std::string query_file;      // [N_T + N_I, d] or [H, N_T + N_I, d]
  std::string key_file;
  std::string attention_file;  // [N, N] or [H, N, N]
};

/// Directory of WTSR1 tensors described by `manifest.json`:
///
///   { "format": "wiper-attention-dump/1", "text_tokens": N_T, "visual_tokens": N_I,
///     "dim": d, "token_grid": [F', H', W'], "heads": 1,
///     "entries": [ {"timestep": 6, "layer": 0, "query": "...", "key": "..."},
///                  {"timestep": 6, "layer": 1, "attention": "..."} ] }
///
/// Extra top-level keys (model id, patch size) are ignored.
struct AttentionDumpManifest {
  std::size_t text_tokens = 0;
  std::size_t visual_tokens = 0;
  std::size_t dim = 0;
  Shape token_grid;
  std::size_t heads = 1;
  std::vector<AttentionDumpEntry> entries;
};

AttentionDumpManifest read_attention_manifest(const std::filesystem::path& dir);
void write_attention_manifest(const std::filesystem::path& dir, const AttentionDumpManifest& manifest);

struct LoadedAttention {
  int timestep = 0;
  int layer = 0;
  JointAttentionMaps maps;
};

/// Loads the entries whose timestep/layer are selected (empty selection = all).
/// Q/K dumps are turned into joint attention per head and mean-reduced over heads;
/// attention dumps are mean-reduced over heads directly.
std::vector<LoadedAttention> load_attention_dump(const std::filesystem::path& dir,
                                                 const AttentionDumpManifest& manifest,
                                                 const std::vector<int>& timesteps, const std::vector<int>& layers,
                                                 AttentionOptions options = {});

/// Largest |row sum - 1| over the assembled joint matrix.
double max_row_sum_deviation(const JointAttentionMaps& maps);

}  // namespace wiper
