#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "cervifuse/common/error.hpp"

// Little-endian primitive (de)serialization for the binary container formats.
namespace cervifuse::binary {

static_assert(std::endian::native == std::endian::little, "only little-endian hosts are supported");

template <typename T>
  requires std::is_arithmetic_v<T>
void write(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T read(std::istream& is, const char* what) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw ParseError(std::string("truncated input while reading ") + what);
  return value;
}

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* data, std::size_t n, const char* what) {
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (!is) throw ParseError(std::string("truncated input while reading ") + what);
}

}  // namespace cervifuse::binary
