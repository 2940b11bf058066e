// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace scmd::io {

using Bytes = std::vector<std::uint8_t>;

/// CRC-32 (IEEE 802.3 polynomial), as used by zlib and PNG.
std::uint32_t crc32(std::span<const std::uint8_t> data);

void put_u32(Bytes& out, std::uint32_t v);
void put_u64(Bytes& out, std::uint64_t v);
void put_f32(Bytes& out, float v);
void put_f64(Bytes& out, double v);
void put_bytes(Bytes& out, std::string_view s);

/// Bounds-checked little-endian reader; running past the end throws kTruncated.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string bytes(std::size_t n);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::span<const std::uint8_t> take(std::size_t n);

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

/// Framed container shared by teacher artifacts and student checkpoints:
/// 8-byte magic, u32 header length, JSON header, payload, CRC-32 over all
/// preceding bytes.
Bytes frame(std::string_view magic, std::string_view header_json, std::span<const std::uint8_t> payload);

struct Unframed {
  std::string header_json;
  Bytes payload;
};

/// Inverse of `frame`. Throws kBadMagic, kTruncated or kCrcMismatch.
Unframed unframe(std::string_view magic, std::span<const std::uint8_t> file);

Bytes read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

}  // namespace scmd::io
