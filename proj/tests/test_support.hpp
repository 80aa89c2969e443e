#pragma once

// Oracles used by the test suites. Everything in this header is written
// against the math directly (plain loops, graph search, textbook formulas)
// and deliberately avoids the library's own computational paths, so a bug in
// an op cannot hide inside its own test.

#include <cmath>
#include <functional>
#include <queue>
#include <vector>

#include "zorro/array.hpp"
#include "zorro/masking.hpp"

namespace oracle {

// Plain i-j-k triple loop, accumulation order independent of the library's.
inline zorro::Array matmul(const zorro::Array& a, const zorro::Array& b) {
  const std::size_t n = a.shape[0], k = a.shape[1], m = b.shape[1];
  zorro::Array c = zorro::Array::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

// The printed attention weights, multiplicative mask, no max-subtraction:
// a_ij = m_ij exp(l_ij) / sum_{j': m_ij'=1} exp(l_ij'). Only valid at
// moderate logits, which is exactly the regime the fidelity check uses.
inline zorro::Array softmax_masked_direct(const zorro::Array& logits,
                                          const zorro::Array& mask) {
  const std::size_t width = logits.shape.back();
  const std::size_t rows = logits.numel() / width;
  zorro::Array out = zorro::Array::zeros(logits.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    double denom = 0.0;
    for (std::size_t j = 0; j < width; ++j)
      denom += mask.data[r * width + j] * std::exp(logits.data[r * width + j]);
    for (std::size_t j = 0; j < width; ++j)
      out.data[r * width + j] =
          mask.data[r * width + j] * std::exp(logits.data[r * width + j]) / denom;
  }
  return out;
}

// Plain row-wise L2 normalization.
inline zorro::Array normalize_rows(const zorro::Array& a) {
  const std::size_t cols = a.shape.back();
  const std::size_t rows = a.numel() / cols;
  zorro::Array out = a;
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      ss += a.data[r * cols + j] * a.data[r * cols + j];
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < cols; ++j) out.data[r * cols + j] *= inv;
  }
  return out;
}

// Central finite differences of a scalar function w.r.t. every coordinate of
// every input, compared against provided analytic gradients. Returns the
// maximum relative error, with the denominator floored so exact zeros match
// exact zeros.
inline double fd_max_rel_err(
    const std::function<double(const std::vector<zorro::Array>&)>& f,
    std::vector<zorro::Array> x,
    const std::vector<zorro::Array>& analytic, double h = 1e-5) {
  double worst = 0.0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (std::size_t i = 0; i < x[t].numel(); ++i) {
      const double keep = x[t].data[i];
      x[t].data[i] = keep + h;
      const double fp = f(x);
      x[t].data[i] = keep - h;
      const double fm = f(x);
      x[t].data[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[t].data[i];
      const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

// Reachability by breadth-first search over the layered flow graph: node
// (layer, token), edges token k at layer l to token i at layer l+1 whenever
// mask_l allows i to attend k, plus the residual self edge. Independent of
// the library's boolean matrix products.
inline zorro::Array reachability_bfs(const std::vector<zorro::AttentionMask>& masks) {
  const std::size_t n = masks[0].m.rows();
  const std::size_t depth = masks.size();
  zorro::Array reach = zorro::Array::zeros({n, n});
  for (std::size_t src = 0; src < n; ++src) {
    std::vector<char> cur(n, 0);
    cur[src] = 1;
    for (std::size_t l = 0; l < depth; ++l) {
      std::vector<char> next(n, 0);
      for (std::size_t k = 0; k < n; ++k) {
        if (!cur[k]) continue;
        next[k] = 1;  // residual
        for (std::size_t i = 0; i < n; ++i)
          if (masks[l].m(i, k) == 1.0) next[i] = 1;
      }
      cur = std::move(next);
    }
    for (std::size_t i = 0; i < n; ++i)
      if (cur[i]) reach(i, src) = 1.0;
  }
  return reach;
}

}  // namespace oracle
