#pragma once

// WTSR1 on-disk tensor format.
//
//   offset 0   "WTSR"                 4-byte magic
//   offset 4   u8  version (= 1)
//   offset 5   u8  rank (1..8)
//   offset 6   2 zero bytes of padding
//   offset 8   rank x u32 little-endian dimensions (each >= 1)
//   then       product(dims) x f32 little-endian payload, row-major
//
// Nothing may follow the payload. Non-finite values are rejected on both save and load.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wiper/tensor.hpp"

namespace wiper {

inline constexpr std::uint8_t kWtsrVersion = 1;
inline constexpr std::size_t kWtsrMaxRank = 8;
inline constexpr std::size_t kWtsrPreambleBytes = 8;

std::vector<std::uint8_t> encode_wtsr(const Tensor& t);
Tensor decode_wtsr(std::span<const std::uint8_t> bytes);

void save_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor load_tensor(const std::filesystem::path& path);

/// Optional JSON sidecar (`<file>.json`) describing a tensor for discovery.
struct TensorManifest {
  std::string name;
  Shape shape;
  std::string role;
  std::optional<std::string> resolution;  // masks only: "pixel", "latent" or "token"
};

std::filesystem::path manifest_path_for(const std::filesystem::path& tensor_path);
void write_manifest(const std::filesystem::path& tensor_path, const TensorManifest& manifest);
/// Reads the sidecar if present. Throws FormatError if it exists but is malformed.
std::optional<TensorManifest> read_manifest(const std::filesystem::path& tensor_path);

/// Saves the tensor and writes a sidecar whose shape is taken from the tensor.
void save_tensor_with_manifest(const Tensor& t, const std::filesystem::path& path, const std::string& role,
                               std::optional<std::string> resolution = std::nullopt);

}  // namespace wiper
