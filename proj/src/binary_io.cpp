// SPDX-License-Identifier: Apache-2.0
#include "scmd/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include <zlib.h>

#include "scmd/error.hpp"

namespace scmd::io {

static_assert(std::endian::native == std::endian::little, "little-endian host required");

std::uint32_t crc32(std::span<const std::uint8_t> data) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = ::crc32(crc, data.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {
template <typename T>
void put_raw(Bytes& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}
}  // namespace

void put_u32(Bytes& out, std::uint32_t v) { put_raw(out, v); }
void put_u64(Bytes& out, std::uint64_t v) { put_raw(out, v); }
void put_f32(Bytes& out, float v) { put_raw(out, v); }
void put_f64(Bytes& out, double v) { put_raw(out, v); }
void put_bytes(Bytes& out, std::string_view s) { out.insert(out.end(), s.begin(), s.end()); }

std::span<const std::uint8_t> Reader::take(std::size_t n) {
  if (n > remaining()) {
    throw Error(ErrorKind::kTruncated, "unexpected end of data at byte " + std::to_string(pos_) +
                                           " (need " + std::to_string(n) + ", have " +
                                           std::to_string(remaining()) + ")");
  }
  auto s = data_.subspan(pos_, n);
  pos_ += n;
  return s;
}

namespace {
template <typename T>
T get_raw(std::span<const std::uint8_t> s) {
  T v;
  std::memcpy(&v, s.data(), sizeof(T));
  return v;
}
}  // namespace

std::uint32_t Reader::u32() { return get_raw<std::uint32_t>(take(4)); }
std::uint64_t Reader::u64() { return get_raw<std::uint64_t>(take(8)); }
float Reader::f32() { return get_raw<float>(take(4)); }
double Reader::f64() { return get_raw<double>(take(8)); }
std::string Reader::bytes(std::size_t n) {
  auto s = take(n);
  return std::string(s.begin(), s.end());
}

Bytes frame(std::string_view magic, std::string_view header_json, std::span<const std::uint8_t> payload) {
  Bytes out;
  out.reserve(magic.size() + 4 + header_json.size() + payload.size() + 4);
  put_bytes(out, magic);
  put_u32(out, static_cast<std::uint32_t>(header_json.size()));
  put_bytes(out, header_json);
  out.insert(out.end(), payload.begin(), payload.end());
  put_u32(out, crc32(out));
  return out;
}

Unframed unframe(std::string_view magic, std::span<const std::uint8_t> file) {
  if (file.size() < magic.size() ||
      std::memcmp(file.data(), magic.data(), magic.size()) != 0) {
    throw Error(ErrorKind::kBadMagic, "bad magic: expected '" + std::string(magic) + "'");
  }
  const std::size_t min_size = magic.size() + 4 + 4;
  if (file.size() < min_size) {
    throw Error(ErrorKind::kTruncated, "file too short (" + std::to_string(file.size()) + " bytes)");
  }
  // Checksum before trusting any length field.
  const auto body = file.first(file.size() - 4);
  const std::uint32_t stored = get_raw<std::uint32_t>(file.last(4));
  const std::uint32_t actual = crc32(body);
  if (stored != actual) {
    throw Error(ErrorKind::kCrcMismatch, "CRC mismatch: stored " + std::to_string(stored) +
                                             ", computed " + std::to_string(actual));
  }
  Reader r(file.subspan(magic.size()));
  const std::uint32_t header_len = r.u32();
  if (static_cast<std::size_t>(header_len) + min_size > file.size()) {
    throw Error(ErrorKind::kTruncated, "header length " + std::to_string(header_len) +
                                           " exceeds file size " + std::to_string(file.size()));
  }
  Unframed out;
  out.header_json = r.bytes(header_len);
  const std::size_t payload_start = magic.size() + 4 + header_len;
  out.payload.assign(file.begin() + static_cast<std::ptrdiff_t>(payload_start),
                     file.end() - 4);
  return out;
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::random_device rd;
  auto tmp = path;
  tmp += ".tmp." + std::to_string(rd());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw Error(ErrorKind::kIo, "write failed for " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::kIo, "cannot rename into " + path.string());
  }
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace scmd::io
