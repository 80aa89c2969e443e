#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "test_support.hpp"
#include "zorro/rng.hpp"
#include "zorro/tape.hpp"

using namespace zorro;

namespace {

// Builds a scalar head over arbitrary leaf inputs. The head weights the op
// output with a fixed random cotangent so FD exercises the whole Jacobian,
// not just the row-sum direction.
using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

Var weighted_sum(Var y, std::uint64_t salt) {
  Tape& t = *y.tape;
  Array r = Rng(salt).fork("cotangent").normals(t.val(y).shape);
  return sum(mul(y, t.constant(std::move(r))));
}

double eval_loss(const Builder& build, const std::vector<Array>& inputs) {
  Tape t;
  std::vector<Var> vars;
  for (const Array& a : inputs) vars.push_back(t.leaf(a, true));
  return t.val(build(t, vars)).data[0];
}

std::vector<Array> analytic_grads(const Builder& build,
                                  const std::vector<Array>& inputs) {
  Tape t;
  std::vector<Var> vars;
  for (const Array& a : inputs) vars.push_back(t.leaf(a, true));
  t.backward(build(t, vars));
  std::vector<Array> out;
  for (Var v : vars) out.push_back(t.grad(v));
  return out;
}

// 20 random instances per op, FD agreement to 1e-4 max relative error.
void expect_fd_ok(const Builder& build,
                  const std::function<std::vector<Array>(Rng&)>& make_inputs,
                  double tol = 1e-4) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(1000 + trial);
    std::vector<Array> inputs = make_inputs(rng);
    const double err = oracle::fd_max_rel_err(
        [&](const std::vector<Array>& x) { return eval_loss(build, x); }, inputs,
        analytic_grads(build, inputs));
    ASSERT_LE(err, tol) << "trial " << trial;
  }
}

}  // namespace

TEST(Matmul, MatchesTripleLoopOracle) {
  Rng rng(5);
  Array a = rng.normals({3, 4});
  Array b = rng.normals({4, 2});
  Tape t;
  Array got = t.val(matmul(t.constant(a), t.constant(b)));
  EXPECT_LE(max_abs_diff(got, oracle::matmul(a, b)), 1e-12);

  for (int trial = 0; trial < 10; ++trial) {
    Rng r2(100 + trial);
    const std::size_t n = 1 + static_cast<std::size_t>(r2.uniform() * 6);
    const std::size_t k = 1 + static_cast<std::size_t>(r2.uniform() * 6);
    const std::size_t m = 1 + static_cast<std::size_t>(r2.uniform() * 6);
    Array x = r2.normals({n, k}), y = r2.normals({k, m});
    Tape t2;
    EXPECT_LE(max_abs_diff(t2.val(matmul(t2.constant(x), t2.constant(y))),
                           oracle::matmul(x, y)),
              1e-12);
  }
}

TEST(Backward, SumGivesOnes) {
  Tape t;
  Var x = t.leaf(Rng(1).normals({4, 3}), true);
  t.backward(sum(x));
  EXPECT_LE(max_abs_diff(t.grad(x), Array::full({4, 3}, 1.0)), 0.0);
}

TEST(Backward, HalfSumOfSquaresGivesInput) {
  Tape t;
  Array x0 = Rng(2).normals({5});
  Var x = t.leaf(x0, true);
  t.backward(scale(sum(mul(x, x)), 0.5));
  EXPECT_LE(max_abs_diff(t.grad(x), x0), 1e-15);
}

TEST(Backward, TwoLayerNetMatchesFiniteDifferences) {
  // x -> gelu(x W1 + b1) W2 + b2, scalar head; all five tensors get checked
  Builder build = [](Tape&, const std::vector<Var>& v) {
    Var h = gelu(add_rowvec(matmul(v[0], v[1]), v[2]));
    Var y = add_rowvec(matmul(h, v[3]), v[4]);
    return weighted_sum(y, 77);
  };
  expect_fd_ok(build, [](Rng& r) {
    return std::vector<Array>{r.normals({3, 4}), r.normals({4, 6}), r.normals({6}),
                              r.normals({6, 2}), r.normals({2})};
  });
}

TEST(Backward, SecondCallRejected) {
  Tape t;
  Var x = t.leaf(Rng(3).normals({2}), true);
  Var loss = sum(x);
  t.backward(loss);
  EXPECT_THROW(t.backward(loss), std::invalid_argument);
}

TEST(Backward, TapeSealedAfterBackward) {
  Tape t;
  Var x = t.leaf(Rng(3).normals({2}), true);
  t.backward(sum(x));
  EXPECT_THROW(sum(x), std::invalid_argument);
}

TEST(Backward, NonScalarRootRejected) {
  Tape t;
  Var x = t.leaf(Rng(3).normals({2, 2}), true);
  EXPECT_THROW(t.backward(x), std::invalid_argument);
}

TEST(Backward, UntouchedLeafHasZeroGradOfLeafShape) {
  Tape t;
  Var x = t.leaf(Rng(4).normals({2, 3}), true);
  Var y = t.leaf(Rng(5).normals({4}), true);
  t.backward(sum(x));
  EXPECT_EQ(t.grad(y).shape, (std::vector<std::size_t>{4}));
  EXPECT_EQ(max_abs(t.grad(y)), 0.0);
  EXPECT_EQ(t.grad(x).shape, (std::vector<std::size_t>{2, 3}));
}

TEST(Backward, ConstantsReceiveNoGradientButFlowThrough) {
  Tape t;
  Var x = t.leaf(Rng(6).normals({3}), true);
  Var c = t.constant(Rng(7).normals({3}));
  t.backward(sum(mul(x, c)));
  EXPECT_LE(max_abs_diff(t.grad(x), t.val(c)), 0.0);
  EXPECT_EQ(max_abs(t.grad(c)), 0.0);
}

TEST(Ops, CrossTapeUseRejected) {
  Tape t1, t2;
  Var a = t1.leaf(Array::scalar(1.0), true);
  Var b = t2.leaf(Array::scalar(2.0), true);
  EXPECT_THROW(add(a, b), std::invalid_argument);
}

// ---- per-op finite-difference properties ----

TEST(OpGrad, Add) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) { return weighted_sum(v[0] + v[1], 1); },
      [](Rng& r) { return std::vector<Array>{r.normals({3, 4}), r.normals({3, 4})}; });
}

TEST(OpGrad, Sub) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) { return weighted_sum(v[0] - v[1], 2); },
      [](Rng& r) { return std::vector<Array>{r.normals({2, 5}), r.normals({2, 5})}; });
}

TEST(OpGrad, Mul) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) { return weighted_sum(v[0] * v[1], 3); },
      [](Rng& r) { return std::vector<Array>{r.normals({4, 3}), r.normals({4, 3})}; });
}

TEST(OpGrad, ScaleAndAddScalar) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) {
        return weighted_sum(add_scalar(v[0] * 2.5, -0.75), 4);
      },
      [](Rng& r) { return std::vector<Array>{r.normals({3, 3})}; });
}

TEST(OpGrad, Matmul) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) {
        return weighted_sum(matmul(v[0], v[1]), 5);
      },
      [](Rng& r) { return std::vector<Array>{r.normals({3, 4}), r.normals({4, 2})}; });
}

TEST(OpGrad, TransposeReshape) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) {
        return weighted_sum(reshape(transpose(v[0]), {2, 6}), 6);
      },
      [](Rng& r) { return std::vector<Array>{r.normals({3, 4})}; });
}

TEST(OpGrad, AddRowvec) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) {
        return weighted_sum(add_rowvec(v[0], v[1]), 7);
      },
      [](Rng& r) { return std::vector<Array>{r.normals({4, 3}), r.normals({3})}; });
}

TEST(OpGrad, ConcatAndSlice) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) {
        Var rows = concat_rows({v[0], v[1]});
        Var cols = concat_cols({slice_rows(rows, 0, 3), v[2]});
        return weighted_sum(slice_cols(cols, 1, 5), 8);
      },
      [](Rng& r) {
        return std::vector<Array>{r.normals({2, 4}), r.normals({3, 4}),
                                  r.normals({3, 2})};
      });
}

TEST(OpGrad, MeanGelu) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) { return mean(gelu(v[0])); },
      [](Rng& r) { return std::vector<Array>{r.normals({5, 3})}; });
}

TEST(OpGrad, Softplus) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) { return weighted_sum(softplus(v[0]), 9); },
      [](Rng& r) { return std::vector<Array>{r.normals({4, 4}, 2.0)}; });
}

TEST(OpGrad, LayerNorm) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) {
        return weighted_sum(layer_norm(v[0], v[1], v[2]), 10);
      },
      [](Rng& r) {
        return std::vector<Array>{r.normals({4, 6}), r.normals({6}), r.normals({6})};
      },
      2e-4);  // LN divides by sigma; FD noise is slightly larger here
}

TEST(OpGrad, SoftmaxMasked) {
  Array mask = Array::from({3, 4}, {1, 1, 0, 1,  //
                                    0, 1, 1, 0,  //
                                    1, 0, 0, 1});
  expect_fd_ok(
      [mask](Tape&, const std::vector<Var>& v) {
        return weighted_sum(softmax_masked(v[0], mask), 11);
      },
      [](Rng& r) { return std::vector<Array>{r.normals({3, 4}, 2.0)}; });
}

TEST(OpGrad, SoftmaxRows) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) {
        return weighted_sum(softmax_rows(v[0]), 17);
      },
      [](Rng& r) { return std::vector<Array>{r.normals({3, 5}, 2.0)}; });
}

// The unmasked softmax and the masked softmax under an all-ones mask walk the
// rows in the same order with the same stabilization, so they agree exactly.
TEST(SoftmaxRows, BitwiseEqualToMaskedWithAllOnes) {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    Array logits = rng.normals({4, 6}, 3.0);
    Tape t;
    Var l = t.leaf(logits, false);
    const Array& plain = t.val(softmax_rows(l));
    const Array& masked =
        t.val(softmax_masked(l, Array::full(logits.shape, 1.0)));
    for (std::size_t i = 0; i < plain.numel(); ++i)
      ASSERT_EQ(plain.data[i], masked.data[i]) << "trial " << trial;
  }
}

TEST(OpGrad, LogSumExp) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) {
        return add(logsumexp_all(v[0]), weighted_sum(logsumexp_rows(v[0]), 12));
      },
      [](Rng& r) { return std::vector<Array>{r.normals({4, 5}, 1.5)}; });
}

TEST(OpGrad, L2NormalizeRows) {
  expect_fd_ok(
      [](Tape&, const std::vector<Var>& v) {
        return weighted_sum(l2_normalize_rows(v[0]), 13);
      },
      [](Rng& r) {
        Array a = r.normals({4, 6});
        for (double& x : a.data) x += (x >= 0 ? 0.5 : -0.5);  // keep rows off zero
        return std::vector<Array>{a};
      });
}

TEST(OpGrad, GatherAndTakeRows) {
  auto idx = std::make_shared<const std::vector<std::size_t>>(
      std::vector<std::size_t>{0, 2, 2, 5, 1});
  expect_fd_ok(
      [idx](Tape&, const std::vector<Var>& v) {
        Var g = gather(v[0], idx, {5});
        Var rows = take_rows(v[1], {1, 0, 1});  // duplicate rows accumulate
        return add(weighted_sum(g, 14), weighted_sum(rows, 15));
      },
      [](Rng& r) { return std::vector<Array>{r.normals({6}), r.normals({2, 3})}; });
}

TEST(SoftmaxMasked, RowsSumToOneOverAllowed) {
  for (int trial = 0; trial < 25; ++trial) {
    Rng r(300 + trial);
    Array logits = r.normals({6, 8}, 3.0);
    Array mask = Array::zeros({6, 8});
    for (std::size_t i = 0; i < 6; ++i) {
      mask(i, static_cast<std::size_t>(r.uniform() * 8)) = 1.0;  // guarantee one
      for (std::size_t j = 0; j < 8; ++j)
        if (r.uniform() < 0.5) mask(i, j) = 1.0;
    }
    Array y = softmax_masked_eval(logits, mask);
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 8; ++j) {
        if (mask(i, j) == 0.0) {
          EXPECT_EQ(y(i, j), 0.0);
        }
        s += y(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    EXPECT_LE(max_abs_diff(y, oracle::softmax_masked_direct(logits, mask)), 1e-10);
  }
}

TEST(Gather, DuplicateIndicesAccumulateGradient) {
  Tape t;
  Var x = t.leaf(Array::from({3}, {1.0, 2.0, 3.0}), true);
  auto idx = std::make_shared<const std::vector<std::size_t>>(
      std::vector<std::size_t>{1, 1, 1});
  t.backward(sum(gather(x, idx, {3})));
  EXPECT_LE(max_abs_diff(t.grad(x), Array::from({3}, {0.0, 3.0, 0.0})), 0.0);
}
