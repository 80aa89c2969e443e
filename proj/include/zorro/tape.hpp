#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "zorro/array.hpp"
#include "zorro/common.hpp"

namespace zorro {

class Tape;

// Handle into one tape slot. Cheap to copy; valid for the tape's lifetime.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Append-only record of a forward computation. Each op pushes one node with
// the produced value and a closure that routes the node's gradient to its
// parents. backward() may be called exactly once, after which the tape is
// sealed (no further ops, no second backward).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Array value, bool requires_grad) {
    return push(std::move(value), requires_grad);
  }
  Var constant(Array value) { return push(std::move(value), false); }

  const Array& val(Var v) const {
    check(v);
    return nodes_[v.id].value;
  }

  bool requires_grad(Var v) const {
    check(v);
    return nodes_[v.id].requires_grad;
  }

  // Gradient of the backward root w.r.t. v; zeros if no path touched it.
  // Shape always equals the value's shape.
  Array grad(Var v) const {
    check(v);
    require(ran_backward_, "grad: backward has not run on this tape");
    const Node& n = nodes_[v.id];
    return n.grad.numel() > 0 ? n.grad : Array::zeros(n.value.shape);
  }

  void backward(Var root) {
    check(root);
    require(!ran_backward_, "backward: already called once on this tape");
    require(nodes_[root.id].value.numel() == 1,
            "backward: root must be scalar, got ",
            shape_str(nodes_[root.id].value));
    ran_backward_ = true;
    if (!nodes_[root.id].requires_grad) return;
    grad_ref(root.id).data[0] = 1.0;
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.back && n.grad.numel() > 0) n.back();
    }
  }

  std::size_t size() const { return nodes_.size(); }
  bool ran_backward() const { return ran_backward_; }

  // ---- op-author interface ----

  Var push(Array value, bool requires_grad) {
    require(!ran_backward_, "tape is sealed: backward already ran");
    nodes_.emplace_back();
    nodes_.back().value = std::move(value);
    nodes_.back().requires_grad = requires_grad;
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  void set_back(Var v, std::function<void()> fn) {
    nodes_[v.id].back = std::move(fn);
  }

  Array& grad_ref(int id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) n.grad = Array::zeros(n.value.shape);
    return n.grad;
  }

  // Adds g into the gradient slot of id, skipping nodes that cannot need it.
  void accum(int id, const Array& g) {
    if (!nodes_[id].requires_grad) return;
    Array& dst = grad_ref(id);
    for (std::size_t i = 0; i < g.numel(); ++i) dst.data[i] += g.data[i];
  }

  const Array& val_at(int id) const { return nodes_[id].value; }
  const Array& grad_at(int id) const { return nodes_[id].grad; }
  bool rg_at(int id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Array value;
    Array grad;
    bool requires_grad = false;
    std::function<void()> back;
  };

  void check(Var v) const {
    require(v.tape == this && v.id >= 0 &&
                v.id < static_cast<int>(nodes_.size()),
            "Var does not belong to this tape");
  }

  std::deque<Node> nodes_;
  bool ran_backward_ = false;
};

namespace detail {

inline Tape& same_tape(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape == b.tape,
          "operands live on different tapes");
  return *a.tape;
}

}  // namespace detail

// ---- elementwise ----

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Array& av = t.val(a);
  const Array& bv = t.val(b);
  require(av.same_shape(bv), "add: shapes differ: ", shape_str(av), " vs ",
          shape_str(bv));
  Array out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
  Var y = t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, b = b.id, o = y.id] {
      const Array& g = tp->grad_at(o);
      tp->accum(a, g);
      tp->accum(b, g);
    });
  }
  return y;
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Array& av = t.val(a);
  const Array& bv = t.val(b);
  require(av.same_shape(bv), "sub: shapes differ: ", shape_str(av), " vs ",
          shape_str(bv));
  Array out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= bv.data[i];
  Var y = t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, b = b.id, o = y.id] {
      const Array& g = tp->grad_at(o);
      tp->accum(a, g);
      if (tp->rg_at(b)) {
        Array neg = g;
        for (double& v : neg.data) v = -v;
        tp->accum(b, neg);
      }
    });
  }
  return y;
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  const Array& av = t.val(a);
  const Array& bv = t.val(b);
  require(av.same_shape(bv), "mul: shapes differ: ", shape_str(av), " vs ",
          shape_str(bv));
  Array out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
  Var y = t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, b = b.id, o = y.id] {
      const Array& g = tp->grad_at(o);
      if (tp->rg_at(a)) {
        Array da = g;
        const Array& bv2 = tp->val_at(b);
        for (std::size_t i = 0; i < da.numel(); ++i) da.data[i] *= bv2.data[i];
        tp->accum(a, da);
      }
      if (tp->rg_at(b)) {
        Array db = g;
        const Array& av2 = tp->val_at(a);
        for (std::size_t i = 0; i < db.numel(); ++i) db.data[i] *= av2.data[i];
        tp->accum(b, db);
      }
    });
  }
  return y;
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Array out = t.val(a);
  for (double& v : out.data) v *= s;
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id, s] {
      const Array& g = tp->grad_at(o);
      Array da = g;
      for (double& v : da.data) v *= s;
      tp->accum(a, da);
    });
  }
  return y;
}

inline Var add_scalar(Var a, double c) {
  Tape& t = *a.tape;
  Array out = t.val(a);
  for (double& v : out.data) v += c;
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id] {
      tp->accum(a, tp->grad_at(o));
    });
  }
  return y;
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

// ---- matrix ops ----

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  Array out = matmul_eval(t.val(a), t.val(b));
  Var y = t.push(std::move(out), t.requires_grad(a) || t.requires_grad(b));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, b = b.id, o = y.id] {
      const Array& g = tp->grad_at(o);
      const Array& av = tp->val_at(a);
      const Array& bv = tp->val_at(b);
      const std::size_t n = av.shape[0], k = av.shape[1], m = bv.shape[1];
      if (tp->rg_at(a)) {
        // dA[i,p] += sum_j G[i,j] B[p,j]
        Array& da = tp->grad_ref(a);
        for (std::size_t i = 0; i < n; ++i) {
          const double* gi = g.data.data() + i * m;
          double* dai = da.data.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) {
            const double* bp = bv.data.data() + p * m;
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += gi[j] * bp[j];
            dai[p] += s;
          }
        }
      }
      if (tp->rg_at(b)) {
        // dB[p,j] += sum_i A[i,p] G[i,j]
        Array& db = tp->grad_ref(b);
        for (std::size_t i = 0; i < n; ++i) {
          const double* ai = av.data.data() + i * k;
          const double* gi = g.data.data() + i * m;
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            double* dbp = db.data.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) dbp[j] += aip * gi[j];
          }
        }
      }
    });
  }
  return y;
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  Array out = transpose_eval(t.val(a));
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id] {
      if (!tp->rg_at(a)) return;
      const Array& g = tp->grad_at(o);
      Array& da = tp->grad_ref(a);
      const std::size_t n = da.shape[0], m = da.shape[1];
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) da.data[i * m + j] += g.data[j * n + i];
    });
  }
  return y;
}

inline Var reshape(Var a, std::vector<std::size_t> shape) {
  Tape& t = *a.tape;
  Array out = t.val(a).reshaped(std::move(shape));
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id] {
      tp->accum(a, tp->grad_at(o).reshaped(tp->val_at(a).shape));
    });
  }
  return y;
}

// Adds a length-d vector to every row of an n x d matrix (bias add).
inline Var add_rowvec(Var m, Var v) {
  Tape& t = detail::same_tape(m, v);
  const Array& mv = t.val(m);
  const Array& vv = t.val(v);
  require(mv.ndim() == 2 && vv.ndim() == 1 && vv.shape[0] == mv.shape[1],
          "add_rowvec: got ", shape_str(mv), " and ", shape_str(vv));
  Array out = mv;
  const std::size_t n = mv.shape[0], d = mv.shape[1];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] += vv.data[j];
  Var y = t.push(std::move(out), t.requires_grad(m) || t.requires_grad(v));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, m = m.id, v = v.id, o = y.id, n, d] {
      const Array& g = tp->grad_at(o);
      tp->accum(m, g);
      if (tp->rg_at(v)) {
        Array& dv = tp->grad_ref(v);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) dv.data[j] += g.data[i * d + j];
      }
    });
  }
  return y;
}

// ---- concatenation and slicing (2-D) ----

inline Var concat_rows(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_rows: no parts");
  Tape& t = *parts[0].tape;
  std::size_t rows = 0;
  const std::size_t cols = t.val(parts[0]).cols();
  bool rg = false;
  for (Var p : parts) {
    detail::same_tape(parts[0], p);
    require(t.val(p).ndim() == 2 && t.val(p).cols() == cols,
            "concat_rows: column mismatch: ", shape_str(t.val(p)), " vs ", cols,
            " columns");
    rows += t.val(p).rows();
    rg = rg || t.requires_grad(p);
  }
  Array out = Array::zeros({rows, cols});
  std::size_t r = 0;
  std::vector<std::pair<int, std::size_t>> spans;  // (parent id, row count)
  for (Var p : parts) {
    const Array& pv = t.val(p);
    std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + r * cols);
    spans.emplace_back(p.id, pv.rows());
    r += pv.rows();
  }
  Var y = t.push(std::move(out), rg);
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, spans = std::move(spans), o = y.id, cols] {
      const Array& g = tp->grad_at(o);
      std::size_t r0 = 0;
      for (auto [pid, nr] : spans) {
        if (tp->rg_at(pid)) {
          Array& dp = tp->grad_ref(pid);
          for (std::size_t i = 0; i < nr * cols; ++i)
            dp.data[i] += g.data[r0 * cols + i];
        }
        r0 += nr;
      }
    });
  }
  return y;
}

inline Var slice_rows(Var a, std::size_t r0, std::size_t r1) {
  Tape& t = *a.tape;
  const Array& av = t.val(a);
  require(av.ndim() == 2 && r0 < r1 && r1 <= av.rows(), "slice_rows: [", r0, ", ",
          r1, ") out of range for ", shape_str(av));
  const std::size_t cols = av.cols();
  Array out = Array::zeros({r1 - r0, cols});
  std::copy(av.data.begin() + r0 * cols, av.data.begin() + r1 * cols,
            out.data.begin());
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id, r0, cols] {
      const Array& g = tp->grad_at(o);
      Array& da = tp->grad_ref(a);
      for (std::size_t i = 0; i < g.numel(); ++i)
        da.data[r0 * cols + i] += g.data[i];
    });
  }
  return y;
}

inline Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
  Tape& t = *a.tape;
  const Array& av = t.val(a);
  require(av.ndim() == 2 && c0 < c1 && c1 <= av.cols(), "slice_cols: [", c0, ", ",
          c1, ") out of range for ", shape_str(av));
  const std::size_t n = av.rows(), m = av.cols(), w = c1 - c0;
  Array out = Array::zeros({n, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < w; ++j) out.data[i * w + j] = av.data[i * m + c0 + j];
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id, c0, n, m, w] {
      const Array& g = tp->grad_at(o);
      Array& da = tp->grad_ref(a);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j)
          da.data[i * m + c0 + j] += g.data[i * w + j];
    });
  }
  return y;
}

inline Var concat_cols(const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_cols: no parts");
  Tape& t = *parts[0].tape;
  const std::size_t n = t.val(parts[0]).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    detail::same_tape(parts[0], p);
    require(t.val(p).ndim() == 2 && t.val(p).rows() == n,
            "concat_cols: row mismatch: ", shape_str(t.val(p)), " vs ", n, " rows");
    cols += t.val(p).cols();
    rg = rg || t.requires_grad(p);
  }
  Array out = Array::zeros({n, cols});
  std::size_t c = 0;
  std::vector<std::pair<int, std::size_t>> spans;
  for (Var p : parts) {
    const Array& pv = t.val(p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j)
        out.data[i * cols + c + j] = pv.data[i * pv.cols() + j];
    spans.emplace_back(p.id, pv.cols());
    c += pv.cols();
  }
  Var y = t.push(std::move(out), rg);
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, spans = std::move(spans), o = y.id, n, cols] {
      const Array& g = tp->grad_at(o);
      std::size_t c0 = 0;
      for (auto [pid, w] : spans) {
        if (tp->rg_at(pid)) {
          Array& dp = tp->grad_ref(pid);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j)
              dp.data[i * w + j] += g.data[i * cols + c0 + j];
        }
        c0 += w;
      }
    });
  }
  return y;
}

// ---- reductions ----

inline Var sum(Var a) {
  Tape& t = *a.tape;
  double s = 0.0;
  for (double v : t.val(a).data) s += v;
  Var y = t.push(Array::scalar(s), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id] {
      const double g = tp->grad_at(o).data[0];
      if (!tp->rg_at(a)) return;
      Array& da = tp->grad_ref(a);
      for (double& v : da.data) v += g;
    });
  }
  return y;
}

inline Var mean(Var a) {
  Tape& t = *a.tape;
  const std::size_t n = t.val(a).numel();
  require(n > 0, "mean: empty array");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

// ---- nonlinearities ----

inline Var gelu(Var a) {
  Tape& t = *a.tape;
  Array out = t.val(a);
  for (double& v : out.data) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id] {
      if (!tp->rg_at(a)) return;
      const Array& g = tp->grad_at(o);
      const Array& x = tp->val_at(a);
      Array& da = tp->grad_ref(a);
      constexpr double inv_sqrt_2pi = 0.3989422804014326779;
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.data[i];
        const double d = 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) +
                         v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
        da.data[i] += g.data[i] * d;
      }
    });
  }
  return y;
}

inline Var softplus(Var a) {
  Tape& t = *a.tape;
  Array out = t.val(a);
  for (double& v : out.data)
    v = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id] {
      if (!tp->rg_at(a)) return;
      const Array& g = tp->grad_at(o);
      const Array& x = tp->val_at(a);
      Array& da = tp->grad_ref(a);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.data[i];
        const double sig = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                    : std::exp(v) / (1.0 + std::exp(v));
        da.data[i] += g.data[i] * sig;
      }
    });
  }
  return y;
}

// ---- normalization ----

// Row-wise layer norm over the last axis of an n x d matrix.
inline Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Tape& t = detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  const Array& xv = t.val(x);
  const Array& gv = t.val(gamma);
  const Array& bv = t.val(beta);
  require(xv.ndim() == 2, "layer_norm: need 2-D input, got ", shape_str(xv));
  const std::size_t n = xv.shape[0], d = xv.shape[1];
  require(gv.ndim() == 1 && gv.shape[0] == d && bv.same_shape(gv),
          "layer_norm: gamma/beta must be [", d, "], got ", shape_str(gv), " and ",
          shape_str(bv));
  auto xhat = std::make_shared<Array>(Array::zeros({n, d}));
  auto inv = std::make_shared<std::vector<double>>(n);
  Array out = Array::zeros({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[i] = iv;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * iv;
      xhat->data[i * d + j] = xh;
      out.data[i * d + j] = gv.data[j] * xh + bv.data[j];
    }
  }
  Var y = t.push(std::move(out), t.requires_grad(x) || t.requires_grad(gamma) ||
                                     t.requires_grad(beta));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, x = x.id, ga = gamma.id, be = beta.id, o = y.id, xhat,
                   inv, n, d] {
      const Array& g = tp->grad_at(o);
      const Array& gv2 = tp->val_at(ga);
      if (tp->rg_at(ga)) {
        Array& dg = tp->grad_ref(ga);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            dg.data[j] += g.data[i * d + j] * xhat->data[i * d + j];
      }
      if (tp->rg_at(be)) {
        Array& db = tp->grad_ref(be);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) db.data[j] += g.data[i * d + j];
      }
      if (tp->rg_at(x)) {
        Array& dx = tp->grad_ref(x);
        for (std::size_t i = 0; i < n; ++i) {
          double mean_gh = 0.0, mean_ghx = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g.data[i * d + j] * gv2.data[j];
            mean_gh += gh;
            mean_ghx += gh * xhat->data[i * d + j];
          }
          mean_gh /= static_cast<double>(d);
          mean_ghx /= static_cast<double>(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g.data[i * d + j] * gv2.data[j];
            dx.data[i * d + j] +=
                (*inv)[i] * (gh - mean_gh - xhat->data[i * d + j] * mean_ghx);
          }
        }
      }
    });
  }
  return y;
}

// Column-wise normalization of an n x d matrix over the batch axis: each
// feature column is centered and scaled to unit variance across the n rows,
// then affinely transformed by gamma/beta ([d]). Statistics always come from
// the rows that are present, so the output of any column has mean zero by
// construction — a batch of identical rows maps to gamma*0 + beta, which is
// what rules out the all-rows-equal fixed point in the contrastive head.
inline Var batch_norm_cols(Var x, Var gamma, Var beta, double eps = 1e-5) {
  Tape& t = detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  const Array& xv = t.val(x);
  const Array& gv = t.val(gamma);
  const Array& bv = t.val(beta);
  require(xv.ndim() == 2, "batch_norm: need 2-D input, got ", shape_str(xv));
  const std::size_t n = xv.shape[0], d = xv.shape[1];
  require(n >= 1, "batch_norm: need at least one row");
  require(gv.ndim() == 1 && gv.shape[0] == d && bv.same_shape(gv),
          "batch_norm: gamma/beta must be [", d, "], got ", shape_str(gv),
          " and ", shape_str(bv));
  auto xhat = std::make_shared<Array>(Array::zeros({n, d}));
  auto inv = std::make_shared<std::vector<double>>(d);
  Array out = Array::zeros({n, d});
  for (std::size_t j = 0; j < d; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xv.data[i * d + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double c = xv.data[i * d + j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(n);
    const double iv = 1.0 / std::sqrt(var + eps);
    (*inv)[j] = iv;
    for (std::size_t i = 0; i < n; ++i) {
      const double xh = (xv.data[i * d + j] - mu) * iv;
      xhat->data[i * d + j] = xh;
      out.data[i * d + j] = gv.data[j] * xh + bv.data[j];
    }
  }
  Var y = t.push(std::move(out), t.requires_grad(x) || t.requires_grad(gamma) ||
                                     t.requires_grad(beta));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, x = x.id, ga = gamma.id, be = beta.id, o = y.id,
                   xhat, inv, n, d] {
      const Array& g = tp->grad_at(o);
      const Array& gv2 = tp->val_at(ga);
      if (tp->rg_at(ga)) {
        Array& dg = tp->grad_ref(ga);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j)
            dg.data[j] += g.data[i * d + j] * xhat->data[i * d + j];
      }
      if (tp->rg_at(be)) {
        Array& db = tp->grad_ref(be);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) db.data[j] += g.data[i * d + j];
      }
      if (tp->rg_at(x)) {
        Array& dx = tp->grad_ref(x);
        for (std::size_t j = 0; j < d; ++j) {
          double mean_gh = 0.0, mean_ghx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double gh = g.data[i * d + j] * gv2.data[j];
            mean_gh += gh;
            mean_ghx += gh * xhat->data[i * d + j];
          }
          mean_gh /= static_cast<double>(n);
          mean_ghx /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const double gh = g.data[i * d + j] * gv2.data[j];
            dx.data[i * d + j] +=
                (*inv)[j] * (gh - mean_gh - xhat->data[i * d + j] * mean_ghx);
          }
        }
      }
    });
  }
  return y;
}

// ---- attention softmax ----

// Differentiable masked softmax over the last axis; the mask is a constant
// routing structure, never a differentiable input. Disallowed outputs are
// exactly zero, so the backward pass needs no mask: y==0 kills those slots.
inline Var softmax_masked(Var logits, const Array& mask) {
  Tape& t = *logits.tape;
  Array out = softmax_masked_eval(t.val(logits), mask);
  Var y = t.push(std::move(out), t.requires_grad(logits));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, l = logits.id, o = y.id] {
      if (!tp->rg_at(l)) return;
      const Array& g = tp->grad_at(o);
      const Array& yv = tp->val_at(o);
      Array& dl = tp->grad_ref(l);
      const std::size_t width = yv.shape.back();
      const std::size_t rows = yv.numel() / width;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data.data() + r * width;
        const double* yr = yv.data.data() + r * width;
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += gr[j] * yr[j];
        for (std::size_t j = 0; j < width; ++j)
          dl.data[r * width + j] += yr[j] * (gr[j] - s);
      }
    });
  }
  return y;
}

// Plain (unmasked) softmax over the last axis, written directly from the
// textbook definition rather than through the mask machinery, so it can act
// as an independent reference when every key is allowed.
inline Var softmax_rows(Var logits) {
  Tape& t = *logits.tape;
  const Array& lv = t.val(logits);
  require(lv.ndim() >= 1, "softmax_rows: need at least 1-D input");
  const std::size_t width = lv.shape.back();
  const std::size_t rows = lv.numel() / width;
  Array out = Array::zeros(lv.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* l = lv.data.data() + r * width;
    double* o = out.data.data() + r * width;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < width; ++j) mx = std::max(mx, l[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < width; ++j) {
      o[j] = std::exp(l[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < width; ++j) o[j] /= sum;
  }
  Var y = t.push(std::move(out), t.requires_grad(logits));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, l = logits.id, o = y.id] {
      if (!tp->rg_at(l)) return;
      const Array& g = tp->grad_at(o);
      const Array& yv = tp->val_at(o);
      Array& dl = tp->grad_ref(l);
      const std::size_t width = yv.shape.back();
      const std::size_t rows = yv.numel() / width;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gr = g.data.data() + r * width;
        const double* yr = yv.data.data() + r * width;
        double s = 0.0;
        for (std::size_t j = 0; j < width; ++j) s += gr[j] * yr[j];
        for (std::size_t j = 0; j < width; ++j)
          dl.data[r * width + j] += yr[j] * (gr[j] - s);
      }
    });
  }
  return y;
}

// ---- log-sum-exp ----

inline Var logsumexp_all(Var a) {
  Tape& t = *a.tape;
  const Array& av = t.val(a);
  require(av.numel() > 0, "logsumexp_all: empty array");
  double mx = av.data[0];
  for (double v : av.data) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : av.data) s += std::exp(v - mx);
  Var y = t.push(Array::scalar(mx + std::log(s)), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id] {
      if (!tp->rg_at(a)) return;
      const double g = tp->grad_at(o).data[0];
      const double lse = tp->val_at(o).data[0];
      const Array& av2 = tp->val_at(a);
      Array& da = tp->grad_ref(a);
      for (std::size_t i = 0; i < av2.numel(); ++i)
        da.data[i] += g * std::exp(av2.data[i] - lse);
    });
  }
  return y;
}

inline Var logsumexp_rows(Var a) {
  Tape& t = *a.tape;
  const Array& av = t.val(a);
  require(av.ndim() == 2, "logsumexp_rows: need 2-D input, got ", shape_str(av));
  const std::size_t n = av.shape[0], m = av.shape[1];
  Array out = Array::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = av.data.data() + i * m;
    double mx = row[0];
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    out.data[i] = mx + std::log(s);
  }
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id, n, m] {
      if (!tp->rg_at(a)) return;
      const Array& g = tp->grad_at(o);
      const Array& lse = tp->val_at(o);
      const Array& av2 = tp->val_at(a);
      Array& da = tp->grad_ref(a);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
          da.data[i * m + j] += g.data[i] * std::exp(av2.data[i * m + j] - lse.data[i]);
    });
  }
  return y;
}

// ---- row normalization ----

inline Var l2_normalize_rows(Var a) {
  Tape& t = *a.tape;
  const Array& av = t.val(a);
  require(av.ndim() == 2, "l2_normalize_rows: need 2-D input, got ", shape_str(av));
  const std::size_t n = av.shape[0], d = av.shape[1];
  auto norms = std::make_shared<std::vector<double>>(n);
  Array out = av;
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += av.data[i * d + j] * av.data[i * d + j];
    const double norm = std::sqrt(s);
    require(std::isfinite(norm) && norm > 0.0, "l2_normalize_rows: row ", i,
            " has norm ", norm, ", rows must be finite and nonzero");
    (*norms)[i] = norm;
    for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] /= norm;
  }
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id, norms, n, d] {
      if (!tp->rg_at(a)) return;
      const Array& g = tp->grad_at(o);
      const Array& yv = tp->val_at(o);
      Array& da = tp->grad_ref(a);
      for (std::size_t i = 0; i < n; ++i) {
        double gy = 0.0;
        for (std::size_t j = 0; j < d; ++j)
          gy += g.data[i * d + j] * yv.data[i * d + j];
        for (std::size_t j = 0; j < d; ++j)
          da.data[i * d + j] +=
              (g.data[i * d + j] - yv.data[i * d + j] * gy) / (*norms)[i];
      }
    });
  }
  return y;
}

// ---- gathers ----

// y.data[i] = a.data[(*idx)[i]]; the index map is a fixed routing constant
// owned by the caller (patchify layouts, window partitions). Duplicate source
// indices are allowed; their gradients accumulate.
inline Var gather(Var a, std::shared_ptr<const std::vector<std::size_t>> idx,
                  std::vector<std::size_t> out_shape) {
  Tape& t = *a.tape;
  const Array& av = t.val(a);
  require(Array::count(out_shape) == idx->size(), "gather: index count ",
          idx->size(), " does not fill shape ", Array::shape_str(out_shape));
  Array out = Array::zeros(std::move(out_shape));
  for (std::size_t i = 0; i < idx->size(); ++i) {
    require((*idx)[i] < av.numel(), "gather: index ", (*idx)[i], " out of range for ",
            shape_str(av));
    out.data[i] = av.data[(*idx)[i]];
  }
  Var y = t.push(std::move(out), t.requires_grad(a));
  if (t.requires_grad(y)) {
    t.set_back(y, [tp = &t, a = a.id, o = y.id, idx] {
      if (!tp->rg_at(a)) return;
      const Array& g = tp->grad_at(o);
      Array& da = tp->grad_ref(a);
      for (std::size_t i = 0; i < idx->size(); ++i)
        da.data[(*idx)[i]] += g.data[i];
    });
  }
  return y;
}

// Embedding lookup: rows of an n x d table selected by index, duplicates
// accumulate gradient into the same table row.
inline Var take_rows(Var table, const std::vector<std::size_t>& rows) {
  Tape& t = *table.tape;
  const Array& tv = t.val(table);
  require(tv.ndim() == 2, "take_rows: table must be 2-D, got ", shape_str(tv));
  const std::size_t d = tv.shape[1];
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(rows.size() * d);
  for (std::size_t r : rows) {
    require(r < tv.shape[0], "take_rows: row ", r, " out of range for ",
            shape_str(tv));
    for (std::size_t j = 0; j < d; ++j) idx->push_back(r * d + j);
  }
  return gather(table, idx, {rows.size(), d});
}

}  // namespace zorro
