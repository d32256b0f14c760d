#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "trkp/error.hpp"

// Little-endian primitives shared by the binary container formats.

namespace trkp::binio {

inline void put_u16(std::ostream& os, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

inline void put_f32_array(std::ostream& os, const float* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) put_f32(os, v[i]);
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u16(os, static_cast<std::uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void read_exact(std::istream& is, char* buf, std::size_t n, const char* what) {
  is.read(buf, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw ParseError(std::string("truncated file while reading ") + what);
}

inline std::uint16_t get_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  read_exact(is, reinterpret_cast<char*>(b), 2, what);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  read_exact(is, reinterpret_cast<char*>(b), 4, what);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline float get_f32(std::istream& is, const char* what) {
  const std::uint32_t bits = get_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void get_f32_array(std::istream& is, float* v, std::size_t n, const char* what) {
  for (std::size_t i = 0; i < n; ++i) v[i] = get_f32(is, what);
}

inline std::string get_string(std::istream& is, const char* what) {
  const std::uint16_t n = get_u16(is, what);
  std::string s(n, '\0');
  if (n) read_exact(is, s.data(), n, what);
  return s;
}

inline void check_magic(std::istream& is, const char* magic8, const char* format_name) {
  char got[8];
  read_exact(is, got, 8, "magic");
  if (std::memcmp(got, magic8, 8) != 0)
    throw ParseError(std::string("bad magic: not a ") + format_name + " file");
}

}  // namespace trkp::binio
