#pragma once

// Little-endian primitives for the dataset and checkpoint formats. Short
// reads surface as TruncationError so callers can tell "file ended" from
// "file is garbage".

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cloudmask/errors.hpp"

namespace cloudmask {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed");
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw TruncationError(std::string("file truncated while reading ") + what);
  }
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
  write_bytes(os, b, 2);
}

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  write_bytes(os, b, 8);
}

inline void write_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

inline std::uint16_t read_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  read_bytes(is, b, 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
  unsigned char b[8];
  read_bytes(is, b, 8, what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline float read_f32(std::istream& is, const char* what) {
  const std::uint32_t bits = read_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_f32_array(std::ostream& os, const float* p, size_t n) {
  // Little-endian hosts can stream the buffer as-is.
  if constexpr (std::endian::native == std::endian::little) {
    write_bytes(os, p, n * 4);
  } else {
    for (size_t i = 0; i < n; ++i) write_f32(os, p[i]);
  }
}

inline void read_f32_array(std::istream& is, float* p, size_t n, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    read_bytes(is, p, n * 4, what);
  } else {
    for (size_t i = 0; i < n; ++i) p[i] = read_f32(is, what);
  }
}

}  // namespace cloudmask
