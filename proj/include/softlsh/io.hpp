#pragma once

// Binary interchange formats.
//
// SKT1 (key/value cache), little-endian:
//   "SKT1" | u32 N | u32 d | N*d f32 keys, row-major | N*d f32 values, row-major
// Mask sidecar: N bytes, each 0 or 1.
// SKTI (bucket index), little-endian:
//   "SKTI" | u32 P | u32 L | u32 N | N*L u16 bucket ids, row-major

#include "softlsh/lsh.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace softlsh {

std::vector<char> encode_skt1(const MatrixXf& keys, const MatrixXf& values);
KvCache<float> decode_skt1(const std::vector<char>& bytes);

void write_kv(const std::filesystem::path& path, const KvCache<float>& cache);
KvCache<float> read_kv(const std::filesystem::path& path);

void write_mask(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask);
std::vector<std::uint8_t> read_mask(const std::filesystem::path& path, Index expected_size);

std::vector<char> encode_index(const BucketAssignment& assignment);
BucketAssignment decode_index(const std::vector<char>& bytes);
void write_index(const std::filesystem::path& path, const BucketAssignment& assignment);
BucketAssignment read_index(const std::filesystem::path& path);

std::vector<char> read_file(const std::filesystem::path& path);
/// Writes to a temporary sibling and renames, so a failed run leaves no partial file.
void write_file(const std::filesystem::path& path, const std::vector<char>& bytes);
void write_file(const std::filesystem::path& path, const std::string& text);

/// Standard-Gaussian keys and values; keys use stream 0 of `seed`, values stream 1.
KvCache<float> generate_gaussian_kv(Index n, Index d, std::uint64_t seed);

}  // namespace softlsh
