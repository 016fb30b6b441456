#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "wiper/attention_dump.hpp"
#include "wiper/mask.hpp"
#include "wiper/toy_field.hpp"

namespace wiper {

/// Synthetic removal scene on a toy field: a moving object block with an attached
/// effect block (a "shadow" one token row below), planted along a shared latent
/// direction, plus text query tokens tuned to attend to that direction.
struct ToySceneConfig {
  std::uint64_t seed = 42;
  std::size_t channels = 4;
  std::size_t latent_frames = 3;  // F' = F/4 + 1
  std::size_t latent_height = 8;
  std::size_t latent_width = 8;
  double background_scale = 0.5;
  double object_scale = 3.0;
  double effect_scale = 1.5;
  double query_gain = 4.0;
  std::vector<std::size_t> query_tokens{1, 2};
  ToyFieldConfig field;
};

struct ToyScene {
  ToySceneConfig config;
  Tensor latent;             // Z_0, [C, F', H, W]
  Matrix text_features;      // conditional text features with planted query rows
  MaskGrid object_pixels;    // [F+1, H*8, W*8]
  MaskGrid object_tokens;    // [F', H/2, W/2]
  MaskGrid effect_tokens;    // planted effect region (ground truth)

  /// Field with the scene's text features installed.
  ToyField make_field() const;
};

ToyScene make_toy_scene(const ToySceneConfig& config = {});

/// Runs an unedited first-order inversion of the scene (cfg 1) and writes the conditional-branch
/// joint Q/K of every MMDiT layer at the selected inversion steps as a WTSR1 attention dump.
AttentionDumpManifest write_toy_attention_dump(const ToyScene& scene, const std::filesystem::path& dir,
                                               const std::vector<int>& timesteps, std::size_t total_steps = 25);

}  // namespace wiper
