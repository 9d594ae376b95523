// Little-endian helpers for the binary file formats.
#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "zskip/errors.hpp"

namespace zskip::binio {

inline void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) put_u8(os, static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, static_cast<std::uint32_t>(v)); }

inline std::uint8_t get_u8(std::istream& is, const char* what) {
  const int c = is.get();
  if (c == std::char_traits<char>::eof())
    throw FormatError(std::string("truncated stream while reading ") + what);
  return static_cast<std::uint8_t>(c);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{get_u8(is, what)} << (8 * i);
  return v;
}

inline std::int32_t get_i32(std::istream& is, const char* what) {
  return static_cast<std::int32_t>(get_u32(is, what));
}

inline bool at_eof(std::istream& is) {
  return is.peek() == std::char_traits<char>::eof();
}

}  // namespace zskip::binio
