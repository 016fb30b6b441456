#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "generators.hpp"
#include "wiper/error.hpp"
#include "wiper/rng.hpp"
#include "wiper/tensor.hpp"
#include "wiper/wtsr.hpp"

namespace wiper {
namespace {

namespace fs = std::filesystem;

Tensor one_to_six() { return Tensor({2, 3}, {1, 2, 3, 4, 5, 6}); }

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("wiper_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::size_t format_error_offset(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_wtsr(bytes);
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "expected FormatError";
  return 0;
}

TEST(Tensor, RejectsZeroDimension) {
  EXPECT_THROW(Tensor({2, 0}), InvalidShape);
  EXPECT_THROW(Tensor(Shape{}), InvalidShape);
  EXPECT_THROW(Tensor({2, 3}, std::vector<float>(5)), ShapeMismatch);
}

TEST(Tensor, OffsetIsRowMajor) {
  const Tensor t = one_to_six();
  EXPECT_EQ(t.at({1, 2}), 6.0f);
  EXPECT_EQ(t.offset({1, 0}), 3u);
  EXPECT_THROW(t.offset({2, 0}), InvalidParam);
}

TEST(Tensor, ContentHashIsPinned) {
  EXPECT_EQ(content_hash(one_to_six()), content_hash(one_to_six()));
  EXPECT_NE(content_hash(one_to_six()), content_hash(one_to_six().reshaped({3, 2})));
  EXPECT_EQ(content_hash(one_to_six()).size(), 16u);
}

TEST(Wtsr, EncodesHeaderAndPayloadLittleEndian) {
  const auto bytes = encode_wtsr(one_to_six());
  ASSERT_EQ(bytes.size(), 8u + 2 * 4 + 6 * 4);
  const std::vector<std::uint8_t> header{'W', 'T', 'S', 'R', 1, 2, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0};
  EXPECT_TRUE(std::equal(header.begin(), header.end(), bytes.begin()));
  // 1.0f = 0x3f800000
  EXPECT_EQ(bytes[16], 0x00);
  EXPECT_EQ(bytes[19], 0x3f);
  EXPECT_EQ(bytes[18], 0x80);
}

TEST(Wtsr, RoundTripIsBitExactThroughFiles) {
  const fs::path dir = temp_dir("roundtrip");
  save_tensor(one_to_six(), dir / "t.wtsr");
  const Tensor back = load_tensor(dir / "t.wtsr");
  EXPECT_TRUE(bit_equal(back, one_to_six()));
  std::ifstream in(dir / "t.wtsr", std::ios::binary);
  const std::vector<std::uint8_t> on_disk((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(on_disk, encode_wtsr(one_to_six()));
}

TEST(Wtsr, PropertyRoundTripOverRandomShapes) {
  SeededRng rng(1234);
  for (int c = 0; c < 200; ++c) {
    Shape shape(testing::uniform_int(rng, 1, 5));
    for (auto& d : shape) d = testing::uniform_int(rng, 1, 6);
    Tensor t = gaussian(rng, shape);
    if (c % 7 == 0) t[0] = -0.0f;
    const Tensor back = decode_wtsr(encode_wtsr(t));
    ASSERT_TRUE(bit_equal(back, t)) << shape_to_string(shape);
  }
}

TEST(Wtsr, RejectsMalformedHeadersWithOffsets) {
  const auto good = encode_wtsr(one_to_six());
  auto bad = good;
  bad[1] = 'X';
  EXPECT_EQ(format_error_offset(bad), 1u);
  bad = good;
  bad[4] = 2;
  EXPECT_EQ(format_error_offset(bad), 4u);
  bad = good;
  bad[5] = 9;
  EXPECT_EQ(format_error_offset(bad), 5u);
  bad = good;
  bad[5] = 0;
  EXPECT_EQ(format_error_offset(bad), 5u);
  bad = good;
  bad[7] = 1;
  EXPECT_EQ(format_error_offset(bad), 7u);
  bad = good;
  bad[8] = 0;  // first dimension becomes 0
  EXPECT_EQ(format_error_offset(bad), 8u);
}

TEST(Wtsr, RejectsTruncationAndTrailingBytes) {
  const auto good = encode_wtsr(one_to_six());
  EXPECT_THROW(decode_wtsr(std::vector<std::uint8_t>(good.begin(), good.begin() + 6)), FormatError);
  EXPECT_THROW(decode_wtsr(std::vector<std::uint8_t>(good.begin(), good.begin() + 12)), FormatError);
  EXPECT_THROW(decode_wtsr(std::vector<std::uint8_t>(good.begin(), good.end() - 1)), FormatError);
  auto longer = good;
  longer.push_back(0);
  EXPECT_THROW(decode_wtsr(longer), FormatError);
}

TEST(Wtsr, NonFiniteValueNamesFlatIndex) {
  Tensor t({2, 4});
  t[5] = std::numeric_limits<float>::quiet_NaN();
  try {
    encode_wtsr(t);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("index 5"), std::string::npos) << e.what();
  }
  // Same check on load: patch a NaN into a valid encoding.
  auto bytes = encode_wtsr(Tensor({2, 4}));
  const std::size_t at = 8 + 2 * 4 + 5 * 4;
  bytes[at + 2] = 0xc0;
  bytes[at + 3] = 0x7f;
  try {
    decode_wtsr(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("index 5"), std::string::npos) << e.what();
    EXPECT_EQ(e.offset(), at);
  }
}

TEST(Wtsr, RejectsRankAboveEight) {
  EXPECT_THROW(encode_wtsr(Tensor(Shape(9, 1))), FormatError);
}

TEST(Wtsr, LoadMissingFileIsError) {
  EXPECT_THROW(load_tensor("/nonexistent/wiper/file.wtsr"), Error);
}

TEST(Wtsr, SidecarManifestRoundTrip) {
  const fs::path dir = temp_dir("manifest");
  save_tensor_with_manifest(one_to_six(), dir / "m.wtsr", "mask", "token");
  const auto m = read_manifest(dir / "m.wtsr");
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->name, "m");
  EXPECT_EQ(m->shape, (Shape{2, 3}));
  EXPECT_EQ(m->role, "mask");
  EXPECT_EQ(m->resolution, std::optional<std::string>("token"));
  EXPECT_FALSE(read_manifest(dir / "absent.wtsr").has_value());

  std::ofstream(manifest_path_for(dir / "bad.wtsr")) << "{ not json";
  EXPECT_THROW(read_manifest(dir / "bad.wtsr"), FormatError);
}

TEST(Rng, SameSeedSameStream) {
  SeededRng a(7), b(7);
  const Tensor ta = gaussian(a, {4}), tb = gaussian(b, {4});
  EXPECT_TRUE(bit_equal(ta, tb));
}

TEST(Rng, DifferentSeedsDiffer) {
  SeededRng a(7), b(8);
  EXPECT_FALSE(bit_equal(gaussian(a, {4}), gaussian(b, {4})));
}

TEST(Rng, GoldenIntegerStreamSeed42) {
  // Independently computed SplitMix64 outputs.
  const std::uint64_t golden[16] = {
      0xbdd732262feb6e95ULL, 0x28efe333b266f103ULL, 0x47526757130f9f52ULL, 0x581ce1ff0e4ae394ULL,
      0x09bc585a244823f2ULL, 0xde4431fa3c80db06ULL, 0x37e9671c45376d5dULL, 0xccf635ee9e9e2fa4ULL,
      0x5705b8770b3d7dd5ULL, 0x9e54d738297f77aeULL, 0x3474724a775b19bfULL, 0x7e348a0e451650beULL,
      0x836ded897f3e46e6ULL, 0x851f977347ed6db7ULL, 0xaa47e31c02e78edcULL, 0x341452c54d7c33f2ULL};
  SeededRng rng(42);
  for (std::uint64_t g : golden) EXPECT_EQ(rng.next_u64(), g);
}

TEST(Rng, GoldenNormalVectorSeed42) {
  const float golden[16] = {0.882248878f,  1.38847327f,   -0.450849861f, 0.670716465f, 0.18835263f,  -0.205104023f,
                            0.219586372f,  -0.666797936f, -0.670371473f, -0.617595375f, -0.676527977f, 0.0298205148f,
                            -1.19077706f,  -0.150531232f, 0.42664665f,  1.41639471f};
  SeededRng rng(42);
  const Tensor t = gaussian(rng, {16});
  // libm may differ by an ulp in double; the float32 result is compared to within 1e-6.
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(t[i], golden[i], 1e-6f) << i;
}

TEST(Rng, GaussianMomentsSeed7) {
  SeededRng rng(7);
  const Tensor t = gaussian(rng, {100000});
  double mean = 0.0;
  for (float v : t.values()) mean += v;
  mean /= static_cast<double>(t.size());
  double var = 0.0;
  for (float v : t.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(t.size() - 1);
  // 3 sigma of the estimators: 3/sqrt(n) = 0.0095 for the mean, 3 sqrt(2/n) = 0.0134 for the variance.
  EXPECT_NEAR(mean, 0.0, 0.02);
  EXPECT_NEAR(var, 1.0, 0.05);
}

TEST(Rng, UniformInHalfOpenUnitInterval) {
  SeededRng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.next_uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, GaussianRejectsZeroDimension) {
  SeededRng rng(1);
  EXPECT_THROW(gaussian(rng, {3, 0}), InvalidShape);
}

}  // namespace
}  // namespace wiper
