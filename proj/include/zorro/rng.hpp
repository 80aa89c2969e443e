#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "zorro/array.hpp"
#include "zorro/common.hpp"

namespace zorro {

// Counter-based random numbers (Philox 4x32, 10 rounds). Draw i is a pure
// function of (key, i), so streams can be forked per purpose ("init",
// "noise", batch index, ...) and regenerated from scratch at any step of a
// resumed run; nothing about the generator lives in mutable global state.
//
// The raw counter stream is bit-portable. normal() goes through libm
// (log/cos), so it is bit-identical across runs on one platform, and across
// platforms up to libm rounding.
namespace philox {

struct Block {
  std::uint32_t x[4];
};

inline void round_once(std::uint32_t* c, std::uint32_t k0, std::uint32_t k1) {
  const std::uint64_t p0 = 0xD2511F53ull * c[0];
  const std::uint64_t p1 = 0xCD9E8D57ull * c[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  const std::uint32_t y0 = hi1 ^ c[1] ^ k0;
  const std::uint32_t y1 = lo1;
  const std::uint32_t y2 = hi0 ^ c[3] ^ k1;
  const std::uint32_t y3 = lo0;
  c[0] = y0; c[1] = y1; c[2] = y2; c[3] = y3;
}

inline Block block(std::uint64_t key, std::uint64_t counter) {
  std::uint32_t c[4] = {static_cast<std::uint32_t>(counter),
                        static_cast<std::uint32_t>(counter >> 32), 0u, 0u};
  std::uint32_t k0 = static_cast<std::uint32_t>(key);
  std::uint32_t k1 = static_cast<std::uint32_t>(key >> 32);
  for (int r = 0; r < 10; ++r) {
    round_once(c, k0, k1);
    k0 += 0x9E3779B9u;
    k1 += 0xBB67AE85u;
  }
  return Block{{c[0], c[1], c[2], c[3]}};
}

}  // namespace philox

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(splitmix64(seed)) {}

  // Forks are independent streams; the child key mixes the parent key with
  // the label (or index), so fork order does not matter.
  Rng fork(std::string_view label) const {
    return Rng(from_key_tag{}, splitmix64(key_ ^ fnv1a64(label)));
  }
  Rng fork(std::uint64_t index) const {
    return Rng(from_key_tag{}, splitmix64(key_ ^ splitmix64(index + 0x51ED2701ull)));
  }

  std::uint64_t key() const { return key_; }

  // i-th uniform draw in [0, 1), 53-bit resolution.
  double uniform_at(std::uint64_t i) const {
    return static_cast<double>(hi64(i) >> 11) * 0x1.0p-53;
  }

  // i-th standard normal draw (Box-Muller; one normal per counter block).
  double normal_at(std::uint64_t i) const {
    const philox::Block b = philox::block(key_, i);
    const std::uint64_t a = (static_cast<std::uint64_t>(b.x[0]) << 32) | b.x[1];
    const std::uint64_t c = (static_cast<std::uint64_t>(b.x[2]) << 32) | b.x[3];
    const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(c >> 11) * 0x1.0p-53;        // [0, 1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  double uniform() { return uniform_at(cursor_++); }
  double normal() { return normal_at(cursor_++); }

  Array normals(std::vector<std::size_t> shape, double scale = 1.0) {
    Array a = Array::zeros(std::move(shape));
    for (double& v : a.data) v = scale * normal();
    return a;
  }

 private:
  struct from_key_tag {};
  Rng(from_key_tag, std::uint64_t key) : key_(key) {}

  std::uint64_t hi64(std::uint64_t i) const {
    const philox::Block b = philox::block(key_, i);
    return (static_cast<std::uint64_t>(b.x[0]) << 32) | b.x[1];
  }

  std::uint64_t key_ = 0;
  std::uint64_t cursor_ = 0;
};

}  // namespace zorro
