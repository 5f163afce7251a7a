#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seqflow/core/error.hpp"

namespace seqflow {

// Container shared by checkpoint and trajectory files:
//   4 magic bytes | 1 version byte | u32 LE header length N | N bytes text header |
//   payload of f32 LE values.
struct BinaryContainer {
  std::string header;
  std::vector<float> payload;
};

namespace detail {

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string encode_container(std::string_view magic, std::uint8_t version, std::string_view header,
                                    std::span<const float> payload) {
  if (magic.size() != 4) throw FormatError("container magic must be 4 bytes");
  std::string out;
  out.reserve(9 + header.size() + 4 * payload.size());
  out.append(magic);
  out.push_back(static_cast<char>(version));
  detail::put_u32_le(out, static_cast<std::uint32_t>(header.size()));
  out.append(header);
  for (float f : payload) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

inline BinaryContainer decode_container(std::string_view bytes, std::string_view magic, std::uint8_t version) {
  if (bytes.size() < 9) throw FormatError("container truncated: missing preamble");
  if (bytes.substr(0, 4) != magic) {
    throw FormatError("bad magic: expected '" + std::string(magic) + "', got '" + std::string(bytes.substr(0, 4)) + "'");
  }
  const auto got_version = static_cast<std::uint8_t>(bytes[4]);
  if (got_version != version) {
    throw FormatError("unsupported format version " + std::to_string(got_version) + " (expected " +
                      std::to_string(version) + ")");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t header_len = detail::get_u32_le(raw + 5);
  if (bytes.size() < 9 + static_cast<std::size_t>(header_len)) throw FormatError("container truncated: header");
  BinaryContainer out;
  out.header = std::string(bytes.substr(9, header_len));
  const std::size_t body = bytes.size() - 9 - header_len;
  if (body % 4 != 0) throw FormatError("container payload is not a whole number of f32 values");
  out.payload.resize(body / 4);
  const auto* p = raw + 9 + header_len;
  for (std::size_t i = 0; i < out.payload.size(); ++i) out.payload[i] = std::bit_cast<float>(detail::get_u32_le(p + 4 * i));
  return out;
}

inline void write_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write to '" + path.string() + "' failed");
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "' for reading");
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

}  // namespace seqflow
