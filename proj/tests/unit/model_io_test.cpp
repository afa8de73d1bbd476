#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <unistd.h>

#include "grail/errors.hpp"
#include "grail/model_io.hpp"
#include "oracles.hpp"

namespace grail {
namespace {

BlockGraph mixed_vector_graph(std::uint64_t seed) {
  oracle::Gen g(seed);
  return BlockGraph({6}, {oracle::random_dense(g, 6, 10, 8, Activation::gelu), oracle::random_ffn(g, 8, 12),
                          oracle::random_attention(g, 8, 4, 2, 2, true), oracle::random_dense(g, 8, 5, 3)});
}

BlockGraph conv_graph(std::uint64_t seed) {
  oracle::Gen g(seed);
  ConvBlock a = oracle::random_conv(g, 2, 4, 3);
  a.producer_geometry = {2, 1};
  return BlockGraph({2, 8, 8}, {a, oracle::random_conv(g, 3, 5, 2, 1, 0)});
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("grail_io_" + std::to_string(::getpid()) + "_" + name);
}

void put_u32(std::vector<std::uint8_t>& b, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[at + static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(v >> (8 * i));
}

std::vector<std::uint8_t> header(const char* magic, std::uint32_t version) {
  std::vector<std::uint8_t> b(8);
  std::memcpy(b.data(), magic, 4);
  put_u32(b, 4, version);
  return b;
}

void append_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  b.resize(b.size() + 4);
  put_u32(b, b.size() - 4, v);
}

TEST(ModelIo, RoundTripIsBitExactAtStoragePrecision) {
  for (const BlockGraph& g : {mixed_vector_graph(1), conv_graph(2)}) {
    const BlockGraph stored = round_to_storage(g);
    const auto bytes = encode_model(g);
    const BlockGraph loaded = decode_model(bytes);
    EXPECT_EQ(loaded, stored);
    EXPECT_EQ(encode_model(loaded), bytes);
  }
}

TEST(ModelIo, FileRoundTrip) {
  const auto path = temp_path("m.grlw");
  const BlockGraph g = mixed_vector_graph(3);
  save_model(g, path);
  EXPECT_EQ(load_model(path), round_to_storage(g));
  std::filesystem::remove(path);
}

TEST(ModelIo, HeaderLayout) {
  const auto bytes = encode_model(mixed_vector_graph(4));
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GRLW");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  const std::uint32_t len = bytes[8] | (bytes[9] << 8) | (bytes[10] << 16) | (static_cast<std::uint32_t>(bytes[11]) << 24);
  EXPECT_EQ(bytes[12], '{');
  EXPECT_EQ(bytes[12 + len - 1], '}');
}

TEST(ModelIo, WrongMagicNamesExpectedMagic) {
  auto bytes = encode_model(mixed_vector_graph(5));
  bytes[0] = 'X';
  try {
    (void)decode_model(bytes);
    FAIL();
  } catch (const BadMagicError& e) {
    EXPECT_NE(std::string(e.what()).find("GRLW"), std::string::npos);
  }
}

TEST(ModelIo, WrongVersion) {
  auto bytes = encode_model(mixed_vector_graph(6));
  bytes[4] = 2;
  EXPECT_THROW((void)decode_model(bytes), VersionError);
}

TEST(ModelIo, ShortPayloadIsTruncation) {
  // Last tensor declares 12 floats; keep only 8 of them.
  oracle::Gen g(7);
  const BlockGraph graph({4}, {oracle::random_dense(g, 4, 6, 12)});
  auto bytes = encode_model(graph);
  bytes.resize(bytes.size() - 4 * 4);
  EXPECT_THROW((void)decode_model(bytes), TruncatedError);
}

TEST(ModelIo, ShortHeaderIsTruncation) {
  auto bytes = encode_model(mixed_vector_graph(8));
  bytes.resize(10);
  EXPECT_THROW((void)decode_model(bytes), TruncatedError);
}

TEST(ModelIo, TrailingPayloadIsManifestError) {
  auto bytes = encode_model(mixed_vector_graph(9));
  bytes.insert(bytes.end(), {0, 0, 0, 0});
  EXPECT_THROW((void)decode_model(bytes), ManifestError);
}

TEST(ModelIo, CountDisagreeingWithShapeIsManifestError) {
  oracle::Gen g(10);
  auto bytes = encode_model(BlockGraph({4}, {oracle::random_dense(g, 4, 6, 3)}));
  const std::uint32_t len = bytes[8] | (bytes[9] << 8);
  std::string manifest(bytes.begin() + 12, bytes.begin() + 12 + len);
  const auto pos = manifest.find("\"count\":24");
  ASSERT_NE(pos, std::string::npos);
  manifest.replace(pos, 10, "\"count\":25");
  std::copy(manifest.begin(), manifest.end(), bytes.begin() + 12);
  EXPECT_THROW((void)decode_model(bytes), ManifestError);
}

TEST(ModelIo, MalformedManifestJson) {
  auto bytes = encode_model(mixed_vector_graph(11));
  bytes[12] = '[';
  EXPECT_THROW((void)decode_model(bytes), ManifestError);
}

TEST(ModelIo, ErrorsShareFormatBase) {
  auto bytes = header("GRLW", 1);
  EXPECT_THROW((void)decode_model(bytes), FormatError);
  EXPECT_THROW((void)load_model(temp_path("missing.grlw")), FormatError);
}

TEST(CalibrationIo, RoundTripBitExact) {
  oracle::Gen g(12);
  const Tensor batch = round_to_storage(g.matrix(128, 16));
  const auto bytes = encode_calibration(batch);
  EXPECT_EQ(bytes.size(), 8 + 4 + 8 + 128 * 16 * 4u);
  EXPECT_EQ(decode_calibration(bytes), batch);
  const auto path = temp_path("c.grlc");
  save_calibration(batch, path);
  EXPECT_EQ(load_calibration(path), batch);
  std::filesystem::remove(path);
}

TEST(CalibrationIo, StorageRoundingIsFloat) {
  const Tensor t = Tensor::vector({0.1, 1.0 / 3.0});
  const Tensor r = round_to_storage(t);
  EXPECT_EQ(r[0], static_cast<double>(0.1f));
  EXPECT_EQ(r[1], static_cast<double>(1.0f / 3.0f));
}

TEST(CalibrationIo, ZeroSamplesRejected) {
  auto bytes = header("GRLC", 1);
  append_u32(bytes, 2);
  append_u32(bytes, 0);
  append_u32(bytes, 16);
  EXPECT_THROW((void)decode_calibration(bytes), EmptyCalibrationError);
}

TEST(CalibrationIo, PayloadLengthMismatchIsTruncation) {
  oracle::Gen g(13);
  auto bytes = encode_calibration(g.matrix(4, 3));
  auto shorter = bytes;
  shorter.resize(shorter.size() - 4);
  EXPECT_THROW((void)decode_calibration(shorter), TruncatedError);
  auto longer = bytes;
  longer.insert(longer.end(), {1, 2, 3, 4});
  EXPECT_THROW((void)decode_calibration(longer), TruncatedError);
}

TEST(CalibrationIo, BadHeaderFields) {
  auto bytes = encode_calibration(Tensor::matrix({{1, 2}}));
  auto magic = bytes;
  magic[3] = 'W';
  EXPECT_THROW((void)decode_calibration(magic), BadMagicError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW((void)decode_calibration(version), VersionError);
  auto rank = header("GRLC", 1);
  append_u32(rank, 7);
  EXPECT_THROW((void)decode_calibration(rank), ManifestError);
}

}  // namespace
}  // namespace grail
