#include "aop/io_util.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "aop/error.hpp"

namespace aop::io {
namespace {

template <typename Float, typename Bits>
std::string encode_le(std::span<const Float> values) {
  static_assert(sizeof(Float) == sizeof(Bits));
  std::string out(values.size() * sizeof(Float), '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    Bits bits = std::bit_cast<Bits>(values[i]);
    for (std::size_t b = 0; b < sizeof(Bits); ++b) {
      out[i * sizeof(Bits) + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  }
  return out;
}

template <typename Float, typename Bits>
std::vector<Float> decode_le(std::string_view bytes) {
  if (bytes.size() % sizeof(Bits) != 0) {
    throw FormatError("raw array size " + std::to_string(bytes.size()) +
                      " is not a multiple of " + std::to_string(sizeof(Bits)));
  }
  std::vector<Float> out(bytes.size() / sizeof(Bits));
  for (std::size_t i = 0; i < out.size(); ++i) {
    Bits bits = 0;
    for (std::size_t b = 0; b < sizeof(Bits); ++b) {
      bits |= static_cast<Bits>(static_cast<unsigned char>(bytes[i * sizeof(Bits) + b]))
              << (8 * b);
    }
    out[i] = std::bit_cast<Float>(bits);
  }
  return out;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

nlohmann::json read_json(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(),
                 nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string encode_f32(std::span<const float> values) {
  return encode_le<float, std::uint32_t>(values);
}
std::vector<float> decode_f32(std::string_view bytes) {
  return decode_le<float, std::uint32_t>(bytes);
}
std::string encode_f64(std::span<const double> values) {
  return encode_le<double, std::uint64_t>(values);
}
std::vector<double> decode_f64(std::string_view bytes) {
  return decode_le<double, std::uint64_t>(bytes);
}

}  // namespace aop::io
