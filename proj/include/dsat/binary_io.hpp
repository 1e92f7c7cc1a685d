#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>

#include "dsat/error.hpp"

namespace dsat::io {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline void write_i32(std::ostream& os, std::int32_t v) { write_u32(os, static_cast<std::uint32_t>(v)); }

inline void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }

inline std::uint32_t read_u32(std::istream& is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) throw Error("unexpected end of binary stream");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::int32_t read_i32(std::istream& is) { return static_cast<std::int32_t>(read_u32(is)); }

inline float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }

}  // namespace dsat::io
