#pragma once

#include <map>
#include <string>

#include "zorro/array.hpp"
#include "zorro/common.hpp"
#include "zorro/rng.hpp"

namespace zorro {

// Named parameter arrays. std::map keeps iteration (and therefore update and
// serialization order) deterministic. Values are initialized from a stream
// keyed by (seed, name), so a parameter's initial value depends only on its
// name, never on creation order or on which other parameters exist.
class ParamStore {
 public:
  template <typename InitFn>
  Array& ensure(const std::string& name, const std::vector<std::size_t>& shape,
                InitFn&& init) {
    auto it = params_.find(name);
    if (it == params_.end()) {
      Array a = init();
      require(a.shape == shape, "param ", name, ": init produced ", shape_str(a),
              ", expected ", Array::shape_str(shape));
      it = params_.emplace(name, std::move(a)).first;
    } else {
      require(it->second.shape == shape, "param ", name, ": registered as ",
              shape_str(it->second), ", requested ", Array::shape_str(shape));
    }
    return it->second;
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Array& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), "param ", name, " does not exist");
    return it->second;
  }
  const Array& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), "param ", name, " does not exist");
    return it->second;
  }

  std::map<std::string, Array>& all() { return params_; }
  const std::map<std::string, Array>& all() const { return params_; }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, a] : params_) n += a.numel();
    return n;
  }

 private:
  std::map<std::string, Array> params_;
};

// Standard weight initializers, all keyed by name.
namespace init {

inline Array normal(std::uint64_t seed, const std::string& name,
                    std::vector<std::size_t> shape, double scale) {
  return Rng(seed).fork("param").fork(name).normals(std::move(shape), scale);
}

inline Array zeros(std::vector<std::size_t> shape) {
  return Array::zeros(std::move(shape));
}

inline Array ones(std::vector<std::size_t> shape) {
  return Array::full(std::move(shape), 1.0);
}

}  // namespace init

}  // namespace zorro
