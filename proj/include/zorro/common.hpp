#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>

// Serialized numbers are written as little-endian bytes without swapping.
static_assert(std::endian::native == std::endian::little,
              "zorro assumes a little-endian platform");

namespace zorro {

namespace detail {

template <typename... Args>
std::string str(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

// Contract violations (bad shapes, bad arguments) throw std::invalid_argument;
// environment/state failures (I/O, config files) throw std::runtime_error.
template <typename... Args>
void require(bool cond, Args&&... args) {
  if (!cond) throw std::invalid_argument(detail::str(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw std::runtime_error(detail::str(std::forward<Args>(args)...));
}

// Shortest round-trip decimal form; identical doubles print identically,
// which is what makes metric logs byte-comparable.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// FNV-1a, used for config hashing and for deriving RNG stream keys from names.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace zorro
