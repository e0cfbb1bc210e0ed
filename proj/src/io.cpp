#include "softlsh/io.hpp"

#include "softlsh/rng.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace softlsh {

namespace {

constexpr std::uint32_t kU32Max = std::numeric_limits<std::uint32_t>::max();

void put_u32(std::vector<char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::vector<char>& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

void put_f32(std::vector<char>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes) : bytes_(bytes) {}

  void expect_magic(const char* magic) {
    need(4, "magic");
    if (std::memcmp(bytes_.data(), magic, 4) != 0) {
      throw FormatError(std::string("bad magic: expected ") + magic);
    }
    pos_ = 4;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes_[pos_]) |
                                              (static_cast<unsigned char>(bytes_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  void expect_end() const {
    if (pos_ != bytes_.size()) throw FormatError("trailing bytes after payload");
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) throw FormatError(std::string("truncated file while reading ") + what);
  }
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
};

void check_header_fits(Index n, Index d) {
  if (n < 0 || d < 0 || static_cast<unsigned long long>(n) > kU32Max || static_cast<unsigned long long>(d) > kU32Max ||
      static_cast<unsigned long long>(n) * static_cast<unsigned long long>(d) > kU32Max) {
    throw ParameterError("N*d does not fit the 32-bit SKT1 header fields");
  }
}

}  // namespace

std::vector<char> encode_skt1(const MatrixXf& keys, const MatrixXf& values) {
  require_dims(values.rows(), keys.rows(), "SKT1 value rows");
  require_dims(values.cols(), keys.cols(), "SKT1 value dimension");
  check_header_fits(keys.rows(), keys.cols());
  std::vector<char> out;
  out.reserve(12 + 8 * static_cast<std::size_t>(keys.size()));
  for (char c : {'S', 'K', 'T', '1'}) out.push_back(c);
  put_u32(out, static_cast<std::uint32_t>(keys.rows()));
  put_u32(out, static_cast<std::uint32_t>(keys.cols()));
  for (Index i = 0; i < keys.rows(); ++i)
    for (Index c = 0; c < keys.cols(); ++c) put_f32(out, keys(i, c));
  for (Index i = 0; i < values.rows(); ++i)
    for (Index c = 0; c < values.cols(); ++c) put_f32(out, values(i, c));
  return out;
}

KvCache<float> decode_skt1(const std::vector<char>& bytes) {
  Reader in(bytes);
  in.expect_magic("SKT1");
  const std::uint32_t n = in.u32("N");
  const std::uint32_t d = in.u32("d");
  const unsigned long long payload = 8ULL * n * d;
  if (in.remaining() < payload) throw FormatError("truncated SKT1 payload");
  MatrixXf keys(n, d);
  MatrixXf values(n, d);
  for (Index i = 0; i < keys.rows(); ++i)
    for (Index c = 0; c < keys.cols(); ++c) keys(i, c) = in.f32("keys");
  for (Index i = 0; i < values.rows(); ++i)
    for (Index c = 0; c < values.cols(); ++c) values(i, c) = in.f32("values");
  in.expect_end();
  return KvCache<float>::from(std::move(keys), std::move(values));
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (f.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move output into place: " + path.string());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::vector<char>(text.begin(), text.end()));
}

void write_kv(const std::filesystem::path& path, const KvCache<float>& cache) {
  write_file(path, encode_skt1(cache.keys, cache.values));
}

KvCache<float> read_kv(const std::filesystem::path& path) { return decode_skt1(read_file(path)); }

void write_mask(const std::filesystem::path& path, const std::vector<std::uint8_t>& mask) {
  write_file(path, std::vector<char>(mask.begin(), mask.end()));
}

std::vector<std::uint8_t> read_mask(const std::filesystem::path& path, Index expected_size) {
  const auto bytes = read_file(path);
  if (static_cast<Index>(bytes.size()) != expected_size) {
    throw FormatError("mask sidecar has " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(expected_size));
  }
  std::vector<std::uint8_t> mask(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (bytes[i] != 0 && bytes[i] != 1) throw FormatError("mask bytes must be 0 or 1");
    mask[i] = static_cast<std::uint8_t>(bytes[i]);
  }
  return mask;
}

std::vector<char> encode_index(const BucketAssignment& a) {
  std::vector<char> out{'S', 'K', 'T', 'I'};
  put_u32(out, static_cast<std::uint32_t>(a.hyperplanes));
  put_u32(out, static_cast<std::uint32_t>(a.tables()));
  put_u32(out, static_cast<std::uint32_t>(a.size()));
  for (Index j = 0; j < a.size(); ++j)
    for (int l = 0; l < a.tables(); ++l) put_u16(out, a.ids(j, l));
  return out;
}

BucketAssignment decode_index(const std::vector<char>& bytes) {
  Reader in(bytes);
  in.expect_magic("SKTI");
  const std::uint32_t p = in.u32("P");
  const std::uint32_t l = in.u32("L");
  const std::uint32_t n = in.u32("N");
  if (p < 1 || p > kMaxHyperplanes) throw FormatError("SKTI: P out of range");
  if (in.remaining() < 2ULL * n * l) throw FormatError("truncated SKTI payload");
  BucketAssignment a{static_cast<int>(p), BucketMatrix(n, l)};
  for (Index j = 0; j < a.size(); ++j) {
    for (Index t = 0; t < a.ids.cols(); ++t) {
      a.ids(j, t) = in.u16("bucket id");
      if (a.ids(j, t) >> p) throw FormatError("SKTI: bucket id exceeds 2^P");
    }
  }
  in.expect_end();
  return a;
}

void write_index(const std::filesystem::path& path, const BucketAssignment& a) { write_file(path, encode_index(a)); }
BucketAssignment read_index(const std::filesystem::path& path) { return decode_index(read_file(path)); }

KvCache<float> generate_gaussian_kv(Index n, Index d, std::uint64_t seed) {
  if (n < 1 || d < 1) throw ParameterError("N and d must be positive");
  check_header_fits(n, d);
  MatrixXf keys(n, d);
  MatrixXf values(n, d);
  Rng key_rng(derive_seed(seed, 0));
  Rng value_rng(derive_seed(seed, 1));
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c) keys(i, c) = static_cast<float>(key_rng.normal());
  for (Index i = 0; i < n; ++i)
    for (Index c = 0; c < d; ++c) values(i, c) = static_cast<float>(value_rng.normal());
  return KvCache<float>::from(std::move(keys), std::move(values));
}

}  // namespace softlsh
