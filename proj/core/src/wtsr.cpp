#include "wiper/wtsr.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "wiper/error.hpp"

namespace wiper {
namespace {

constexpr std::uint8_t kMagic[4] = {'W', 'T', 'S', 'R'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[at + i]) << (8 * i);
  return v;
}

std::size_t header_bytes(std::size_t rank) { return kWtsrPreambleBytes + 4 * rank; }

void reject_non_finite(const Tensor& t, std::size_t payload_offset) {
  const std::size_t bad = t.first_non_finite();
  if (bad != t.size()) {
    throw FormatError("non-finite value at flat index " + std::to_string(bad), payload_offset + 4 * bad);
  }
}

}  // namespace

std::vector<std::uint8_t> encode_wtsr(const Tensor& t) {
  if (t.rank() == 0 || t.rank() > kWtsrMaxRank) {
    throw FormatError("rank " + std::to_string(t.rank()) + " not representable in WTSR1", 5);
  }
  reject_non_finite(t, header_bytes(t.rank()));
  std::vector<std::uint8_t> out;
  out.reserve(header_bytes(t.rank()) + 4 * t.size());
  for (std::uint8_t b : kMagic) out.push_back(b);
  out.push_back(kWtsrVersion);
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  out.push_back(0);
  out.push_back(0);
  for (std::size_t d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

Tensor decode_wtsr(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kWtsrPreambleBytes) throw FormatError("truncated header", bytes.size());
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes[i] != kMagic[i]) throw FormatError("bad magic, expected 'WTSR'", i);
  }
  if (bytes[4] != kWtsrVersion) throw FormatError("unsupported version " + std::to_string(bytes[4]), 4);
  const std::size_t rank = bytes[5];
  if (rank == 0 || rank > kWtsrMaxRank) throw FormatError("rank " + std::to_string(rank) + " outside 1..8", 5);
  if (bytes[6] != 0 || bytes[7] != 0) throw FormatError("non-zero header padding", bytes[6] != 0 ? 6 : 7);
  if (bytes.size() < header_bytes(rank)) throw FormatError("truncated dimension list", bytes.size());

  Shape shape(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t at = kWtsrPreambleBytes + 4 * i;
    shape[i] = get_u32(bytes, at);
    if (shape[i] == 0) throw FormatError("zero dimension on axis " + std::to_string(i), at);
    count *= shape[i];
  }

  const std::size_t payload = header_bytes(rank);
  const std::size_t expected = payload + 4 * count;
  if (bytes.size() < expected) {
    throw FormatError("truncated payload: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()),
                      bytes.size());
  }
  if (bytes.size() > expected) throw FormatError("trailing bytes after payload", expected);

  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(get_u32(bytes, payload + 4 * i));
  Tensor t(std::move(shape), std::move(data));
  reject_non_finite(t, payload);
  return t;
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  const auto bytes = encode_wtsr(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_wtsr(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

std::filesystem::path manifest_path_for(const std::filesystem::path& tensor_path) {
  return std::filesystem::path(tensor_path.string() + ".json");
}

void write_manifest(const std::filesystem::path& tensor_path, const TensorManifest& manifest) {
  nlohmann::json j;
  j["name"] = manifest.name;
  j["shape"] = manifest.shape;
  j["role"] = manifest.role;
  if (manifest.resolution) j["resolution"] = *manifest.resolution;
  std::ofstream out(manifest_path_for(tensor_path));
  if (!out) throw Error("cannot write manifest for " + tensor_path.string());
  out << j.dump(2) << "\n";
}

std::optional<TensorManifest> read_manifest(const std::filesystem::path& tensor_path) {
  const auto path = manifest_path_for(tensor_path);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::ifstream in(path);
  try {
    const auto j = nlohmann::json::parse(in);
    TensorManifest m;
    m.name = j.at("name").get<std::string>();
    m.shape = j.at("shape").get<Shape>();
    m.role = j.at("role").get<std::string>();
    if (j.contains("resolution")) m.resolution = j.at("resolution").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": malformed manifest: " + e.what(), 0);
  }
}

void save_tensor_with_manifest(const Tensor& t, const std::filesystem::path& path, const std::string& role,
                               std::optional<std::string> resolution) {
  save_tensor(t, path);
  write_manifest(path, TensorManifest{path.stem().string(), t.shape(), role, std::move(resolution)});
}

}  // namespace wiper
