#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace aop::io {

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

nlohmann::json read_json(const std::filesystem::path& path);
// Pretty-printed with a trailing newline; key order is nlohmann's sorted order.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

std::string sha256_hex(std::string_view bytes);

// Little-endian IEEE-754 encodings, independent of host byte order.
std::string encode_f32(std::span<const float> values);
std::vector<float> decode_f32(std::string_view bytes);
std::string encode_f64(std::span<const double> values);
std::vector<double> decode_f64(std::string_view bytes);

}  // namespace aop::io
