#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "softlsh/io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>

using namespace softlsh;
namespace fs = std::filesystem;

namespace {

std::uint32_t le_u32(const std::vector<char>& b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[at + static_cast<std::size_t>(i)]);
  return v;
}

float le_f32(const std::vector<char>& b, std::size_t at) {
  const std::uint32_t bits = le_u32(b, at);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "softlsh_test_io";
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("SKT1 layout") {
  const auto cache = generate_gaussian_kv(4, 2, 7);
  const auto bytes = encode_skt1(cache.keys, cache.values);
  REQUIRE(bytes.size() == 4 + 4 + 4 + 2 * 4 * 2 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SKT1");
  CHECK(le_u32(bytes, 4) == 4);
  CHECK(le_u32(bytes, 8) == 2);
  for (Index i = 0; i < 4; ++i) {
    for (Index c = 0; c < 2; ++c) {
      CHECK(le_f32(bytes, 12 + 4 * static_cast<std::size_t>(i * 2 + c)) == cache.keys(i, c));
      CHECK(le_f32(bytes, 44 + 4 * static_cast<std::size_t>(i * 2 + c)) == cache.values(i, c));
    }
  }
}

TEST_CASE("generator draws keys and values from streams 0 and 1") {
  const auto cache = generate_gaussian_kv(3, 5, 11);
  Rng keys(derive_seed(11, 0)), values(derive_seed(11, 1));
  for (Index i = 0; i < 3; ++i) {
    for (Index c = 0; c < 5; ++c) {
      CHECK(cache.keys(i, c) == static_cast<float>(keys.normal()));
      CHECK(cache.values(i, c) == static_cast<float>(values.normal()));
    }
  }
  CHECK(encode_skt1(cache.keys, cache.values) == encode_skt1(generate_gaussian_kv(3, 5, 11).keys,
                                                             generate_gaussian_kv(3, 5, 11).values));
}

TEST_CASE("generated moments at N*d = 1e6") {
  const auto cache = generate_gaussian_kv(10000, 100, 3);
  for (const MatrixXf* m : {&cache.keys, &cache.values}) {
    const double n = static_cast<double>(m->size());
    const double mean = m->cast<double>().mean();
    const double var = (m->cast<double>().array() - mean).square().sum() / (n - 1);
    CHECK(std::abs(mean) <= 3.0 / std::sqrt(n));
    CHECK(std::abs(var - 1.0) <= 3.0 * std::sqrt(2.0 / n));
  }
}

TEST_CASE("SKT1 round trip is byte identical") {
  const auto cache = generate_gaussian_kv(33, 7, 1);
  const auto bytes = encode_skt1(cache.keys, cache.values);
  const auto back = decode_skt1(bytes);
  CHECK(back.keys == cache.keys);
  CHECK(back.values == cache.values);
  CHECK(encode_skt1(back.keys, back.values) == bytes);

  const fs::path p = temp_dir() / "rt.skt";
  write_kv(p, cache);
  CHECK(read_file(p) == bytes);
  CHECK(read_kv(p).keys == cache.keys);
}

TEST_CASE("malformed SKT1 input") {
  const auto cache = generate_gaussian_kv(2, 3, 1);
  auto bytes = encode_skt1(cache.keys, cache.values);
  auto bad_magic = bytes;
  bad_magic[3] = '2';
  CHECK_THROWS_AS(decode_skt1(bad_magic), FormatError);
  CHECK_THROWS_AS(decode_skt1(std::vector<char>(bytes.begin(), bytes.end() - 1)), FormatError);
  CHECK_THROWS_AS(decode_skt1(std::vector<char>(bytes.begin(), bytes.begin() + 6)), FormatError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_skt1(trailing), FormatError);
  CHECK_THROWS_AS(encode_skt1(MatrixXf::Zero(2, 3), MatrixXf::Zero(3, 3)), DimensionError);
}

TEST_CASE("header overflow is rejected") {
  // Zero columns allocate nothing, so an oversized row count is cheap to build.
  const MatrixXf huge(Index{1} << 32, 0);
  CHECK_THROWS_AS(encode_skt1(huge, huge), ParameterError);
}

TEST_CASE("missing files are I/O errors") {
  CHECK_THROWS_AS(read_kv(temp_dir() / "does_not_exist.skt"), IoError);
  CHECK_THROWS_AS(write_file(temp_dir() / "no_such_dir" / "x.bin", std::string("x")), IoError);
}

TEST_CASE("mask sidecar") {
  const fs::path p = temp_dir() / "mask.bin";
  write_mask(p, {1, 0, 1});
  CHECK(read_mask(p, 3) == std::vector<std::uint8_t>{1, 0, 1});
  CHECK_THROWS_AS(read_mask(p, 4), FormatError);
  write_file(p, std::string("\x01\x02", 2));
  CHECK_THROWS_AS(read_mask(p, 2), FormatError);
}

TEST_CASE("SKTI round trip") {
  BucketAssignment a{3, BucketMatrix(4, 2)};
  a.ids << 0, 7, 1, 6, 2, 5, 3, 4;
  const auto bytes = encode_index(a);
  REQUIRE(bytes.size() == 16 + 4 * 2 * 2);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SKTI");
  CHECK(le_u32(bytes, 4) == 3);
  CHECK(le_u32(bytes, 8) == 2);
  CHECK(le_u32(bytes, 12) == 4);
  CHECK(static_cast<unsigned char>(bytes[16 + 2]) == 7);  // row 0, table 1
  const auto back = decode_index(bytes);
  CHECK(back.hyperplanes == 3);
  CHECK(back.ids == a.ids);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_index(bad), FormatError);

  const fs::path p = temp_dir() / "idx.skti";
  write_index(p, a);
  CHECK(read_index(p).ids == a.ids);
}
