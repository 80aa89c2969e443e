#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "zorro/array.hpp"
#include "zorro/common.hpp"
#include "zorro/params.hpp"

namespace zorro {

// Binary checkpoint layout (all integers u64 little-endian, floats f64 LE):
//
//   byte[8]  magic "ZORROCK1"
//   u64      config text length, then that many bytes of canonical config
//   u64      number of named arrays, then per array:
//              u64 name length, name bytes,
//              u64 ndim, u64 dims[ndim],
//              f64 data[numel]
//
// Model parameters and optimizer state share the table; optimizer entries
// are namespaced "opt.*". The build targets little-endian hosts only
// (statically asserted), so values are written out as raw doubles.

inline constexpr char kCheckpointMagic[8] = {'Z', 'O', 'R', 'R',
                                             'O', 'C', 'K', '1'};

struct Checkpoint {
  std::string config_text;
  std::map<std::string, Array> arrays;
};

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint64_t get_u64(std::istream& in, const char* what) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    fail("checkpoint: truncated while reading ", what);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::string& config_text,
                            const std::map<std::string, Array>& arrays) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail("checkpoint: cannot open ", path, " for writing");
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u64(out, config_text.size());
  out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
  detail::put_u64(out, arrays.size());
  for (const auto& [name, a] : arrays) {
    detail::put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u64(out, a.ndim());
    for (std::size_t d : a.shape) detail::put_u64(out, d);
    out.write(reinterpret_cast<const char*>(a.data.data()),
              static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!out) fail("checkpoint: write to ", path, " failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("checkpoint: cannot open ", path);
  char magic[8];
  if (!in.read(magic, sizeof magic) ||
      std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    fail("checkpoint: ", path, " is not a checkpoint (bad magic)");
  Checkpoint ck;
  const std::uint64_t cfg_len = detail::get_u64(in, "config length");
  ck.config_text.resize(cfg_len);
  if (cfg_len > 0 &&
      !in.read(ck.config_text.data(), static_cast<std::streamsize>(cfg_len)))
    fail("checkpoint: truncated config text");
  const std::uint64_t n = detail::get_u64(in, "array count");
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint64_t name_len = detail::get_u64(in, "name length");
    std::string name(name_len, '\0');
    if (name_len > 0 &&
        !in.read(name.data(), static_cast<std::streamsize>(name_len)))
      fail("checkpoint: truncated array name");
    const std::uint64_t ndim = detail::get_u64(in, "ndim");
    std::vector<std::size_t> shape;
    std::size_t numel = 1;
    for (std::uint64_t d = 0; d < ndim; ++d) {
      shape.push_back(static_cast<std::size_t>(detail::get_u64(in, "dim")));
      numel *= shape.back();
    }
    Array a = Array::zeros(shape);
    if (numel > 0 &&
        !in.read(reinterpret_cast<char*>(a.data.data()),
                 static_cast<std::streamsize>(numel * sizeof(double))))
      fail("checkpoint: truncated data for array ", name);
    if (!ck.arrays.emplace(std::move(name), std::move(a)).second)
      fail("checkpoint: duplicate array name in ", path);
  }
  return ck;
}

// Splits a loaded array table into model parameters and optimizer state.
inline void split_checkpoint_arrays(const std::map<std::string, Array>& all,
                                    std::map<std::string, Array>& params,
                                    std::map<std::string, Array>& opt) {
  for (const auto& [name, a] : all) {
    if (name.rfind("opt.", 0) == 0) opt[name] = a;
    else params[name] = a;
  }
}

// Installs `loaded` into `store`, requiring exactly the same names and
// shapes. On any difference the error lists every missing name, every
// unexpected name, and every shape mismatch, so a wrong checkpoint is
// diagnosable in one read.
inline void restore_params(ParamStore& store,
                           const std::map<std::string, Array>& loaded) {
  std::string missing, unexpected, mismatched;
  for (const auto& [name, value] : store.all()) {
    auto it = loaded.find(name);
    if (it == loaded.end()) {
      missing += " " + name;
    } else if (!(value.shape == it->second.shape)) {
      mismatched += " " + name + "(" +
                    Array::shape_str(it->second.shape) + " vs " +
                    Array::shape_str(value.shape) + ")";
    }
  }
  for (const auto& [name, value] : loaded)
    if (!store.has(name)) unexpected += " " + name;
  if (!missing.empty() || !unexpected.empty() || !mismatched.empty())
    fail("checkpoint does not match the model.",
         missing.empty() ? "" : " missing:" + missing,
         unexpected.empty() ? "" : " unexpected:" + unexpected,
         mismatched.empty() ? "" : " shape:" + mismatched);
  for (const auto& [name, value] : loaded) store.at(name) = value;
}

}  // namespace zorro
