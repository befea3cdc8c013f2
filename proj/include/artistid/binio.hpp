#pragma once

// Little-endian primitive codecs for the binary cache and checkpoint formats.
// Written byte-by-byte so output is identical on any host.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "artistid/error.hpp"

namespace artistid::binio {

inline void put_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

inline void put_u16(std::ostream& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void get_bytes(std::istream& in, char* dst, std::size_t n, const std::string& what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("truncated " + what);
}

inline std::uint8_t get_u8(std::istream& in, const std::string& what) {
  unsigned char b = 0;
  get_bytes(in, reinterpret_cast<char*>(&b), 1, what);
  return b;
}

inline std::uint16_t get_u16(std::istream& in, const std::string& what) {
  unsigned char b[2];
  get_bytes(in, reinterpret_cast<char*>(b), 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  get_bytes(in, reinterpret_cast<char*>(b), 4, what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline float get_f32(std::istream& in, const std::string& what) {
  return std::bit_cast<float>(get_u32(in, what));
}

}  // namespace artistid::binio
