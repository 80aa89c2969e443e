#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "zorro/common.hpp"

namespace zorro {

// Dense row-major double tensor. All numeric state in this library (inputs,
// parameters, gradients, checkpoints) is one of these; there are no views,
// every op produces a fresh contiguous buffer.
struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Array() = default;

  static Array zeros(std::vector<std::size_t> shape) {
    Array a;
    a.shape = std::move(shape);
    a.data.assign(count(a.shape), 0.0);
    return a;
  }

  static Array full(std::vector<std::size_t> shape, double v) {
    Array a = zeros(std::move(shape));
    std::fill(a.data.begin(), a.data.end(), v);
    return a;
  }

  static Array from(std::vector<std::size_t> shape, std::vector<double> values) {
    require(count(shape) == values.size(), "Array::from: shape ", shape_str(shape),
            " wants ", count(shape), " values, got ", values.size());
    Array a;
    a.shape = std::move(shape);
    a.data = std::move(values);
    return a;
  }

  static Array scalar(double v) { return from({1}, {v}); }

  static Array identity(std::size_t n) {
    Array a = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) a.data[i * n + i] = 1.0;
    return a;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }

  std::size_t rows() const {
    require(ndim() == 2, "rows(): array is ", shape_str(shape), ", not 2-D");
    return shape[0];
  }
  std::size_t cols() const {
    require(ndim() == 2, "cols(): array is ", shape_str(shape), ", not 2-D");
    return shape[1];
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }

  Array reshaped(std::vector<std::size_t> new_shape) const {
    require(count(new_shape) == numel(), "reshape: ", shape_str(shape), " has ",
            numel(), " elements, target ", shape_str(new_shape), " wants ",
            count(new_shape));
    Array a = *this;
    a.shape = std::move(new_shape);
    return a;
  }

  bool same_shape(const Array& o) const { return shape == o.shape; }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  static std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) out += " x ";
      out += std::to_string(s[i]);
    }
    return out + "]";
  }
};

inline std::string shape_str(const Array& a) { return Array::shape_str(a.shape); }

// ---- plain (non-differentiable) numeric helpers ----

inline Array matmul_eval(const Array& a, const Array& b) {
  require(a.ndim() == 2 && b.ndim() == 2, "matmul: need 2-D operands, got ",
          shape_str(a), " and ", shape_str(b));
  require(a.cols() == b.rows(), "matmul: inner dimensions disagree: ", shape_str(a),
          " vs ", shape_str(b));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Array c = Array::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data.data() + i * k;
    double* ci = c.data.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b.data.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

inline Array transpose_eval(const Array& a) {
  require(a.ndim() == 2, "transpose: need 2-D operand, got ", shape_str(a));
  Array t = Array::zeros({a.shape[1], a.shape[0]});
  for (std::size_t i = 0; i < a.shape[0]; ++i)
    for (std::size_t j = 0; j < a.shape[1]; ++j) t(j, i) = a(i, j);
  return t;
}

// Row-wise masked softmax over the last axis. mask entries must be exactly
// 0 or 1; output is 0 at disallowed entries and the allowed entries of each
// row sum to 1. Max-subtraction runs over allowed entries only, so the result
// equals the plain multiplicative form a_ij = m_ij exp(l_ij) / sum_allowed
// without overflow at large logits. A row with no allowed entry has no
// defined distribution and is rejected.
inline Array softmax_masked_eval(const Array& logits, const Array& mask) {
  require(logits.same_shape(mask), "softmax_masked: logits ", shape_str(logits),
          " and mask ", shape_str(mask), " differ in shape");
  require(logits.ndim() >= 1, "softmax_masked: need at least 1-D input");
  const std::size_t width = logits.shape.back();
  const std::size_t rows = logits.numel() / width;
  Array out = Array::zeros(logits.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = logits.data.data() + r * width;
    const double* m = mask.data.data() + r * width;
    double* o = out.data.data() + r * width;
    double mx = -std::numeric_limits<double>::infinity();
    std::size_t allowed = 0;
    for (std::size_t j = 0; j < width; ++j) {
      require(m[j] == 0.0 || m[j] == 1.0, "softmax_masked: mask entry (", r, ",", j,
              ") is ", m[j], ", must be 0 or 1");
      if (m[j] == 1.0) {
        ++allowed;
        mx = std::max(mx, l[j]);
      }
    }
    require(allowed > 0, "softmax_masked: isolated query: row ", r,
            " has no allowed keys");
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      if (m[j] == 1.0) {
        o[j] = std::exp(l[j] - mx);
        sum += o[j];
      }
    }
    for (std::size_t j = 0; j < width; ++j)
      if (m[j] == 1.0) o[j] /= sum;
  }
  return out;
}

inline Array softmax_eval(const Array& logits) {
  return softmax_masked_eval(logits, Array::full(logits.shape, 1.0));
}

inline double max_abs(const Array& a) {
  double m = 0.0;
  for (double v : a.data) m = std::max(m, std::abs(v));
  return m;
}

inline double max_abs_diff(const Array& a, const Array& b) {
  require(a.same_shape(b), "max_abs_diff: shapes differ: ", shape_str(a), " vs ",
          shape_str(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

// Ties resolve to the lowest index, deliberately: retrieval metrics depend on
// a deterministic argmax.
inline std::size_t argmax(const double* v, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < n; ++j)
    if (v[j] > v[best]) best = j;
  return best;
}

inline Array l2_normalize_rows_eval(const Array& a) {
  require(a.ndim() == 2, "l2_normalize_rows: need 2-D input, got ", shape_str(a));
  Array out = a;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * a(i, j);
    const double norm = std::sqrt(s);
    require(std::isfinite(norm) && norm > 0.0,
            "l2_normalize_rows: row ", i, " has norm ", norm,
            ", rows must be finite and nonzero");
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) /= norm;
  }
  return out;
}

inline bool all_finite(const Array& a) {
  for (double v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace zorro
