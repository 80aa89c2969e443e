// Contrastive losses against a direct-summation oracle and frozen hand
// values; classification losses against hand values and finite differences;
// representation metrics on constructed configurations.
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "test_support.hpp"
#include "zorro/objectives.hpp"
#include "zorro/rng.hpp"
#include "zorro/tape.hpp"

using namespace zorro;

namespace {

// Direct transcription of the contrastive objective: every positive pair
// competes against the sum of *all* B^2 pair similarities.
double nce_oracle(const Array& za, const Array& zv, double tau) {
  Array a = oracle::normalize_rows(za);
  Array v = oracle::normalize_rows(zv);
  const std::size_t b = a.rows(), e = a.cols();
  double denom = 0.0;
  for (std::size_t k = 0; k < b; ++k)
    for (std::size_t j = 0; j < b; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < e; ++d) dot += a(k, d) * v(j, d);
      denom += std::exp(dot / tau);
    }
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double dot = 0.0;
    for (std::size_t d = 0; d < e; ++d) dot += a(i, d) * v(i, d);
    loss -= std::log(std::exp(dot / tau) / denom);
  }
  return loss;
}

Array embeddings(std::uint64_t seed, std::size_t b, std::size_t e) {
  return Rng(seed).fork("z").normals({b, e});
}

}  // namespace

TEST(NceLoss, IdenticalUnitVectorsGiveFrozenValue) {
  // All similarities equal -> every term is log(B^2); with B=2 the loss is
  // 2*log(4) regardless of tau.
  Tape t;
  Array z = Array::zeros({2, 4});
  z(0, 0) = 1.0;
  z(1, 0) = 1.0;
  ContrastiveConfig cfg;  // tau = 0.08
  Var loss = nce_loss(t.leaf(z, false), t.leaf(z, false), cfg);
  EXPECT_NEAR(t.val(loss).data[0], 2.7725887222397811, 1e-12);
}

TEST(NceLoss, FusionObjectiveIsThreePairTerms) {
  Tape t;
  Array z = Array::zeros({2, 4});
  z(0, 1) = 2.0;  // scale must not matter after normalization
  z(1, 1) = 2.0;
  ContrastiveConfig cfg;
  Var a = t.leaf(z, false), v = t.leaf(z, false), f = t.leaf(z, false);
  Var loss = fusion_nce_loss(a, v, f, cfg);
  EXPECT_NEAR(t.val(loss).data[0], 3 * 2.7725887222397811, 1e-12);

  cfg.include_fusion_terms = false;
  Var pair_only = fusion_nce_loss(a, v, f, cfg);
  EXPECT_NEAR(t.val(pair_only).data[0], 2.7725887222397811, 1e-12);
}

TEST(NceLoss, MatchesDirectSummationOracle) {
  ContrastiveConfig cfg;
  for (std::size_t b : {2u, 4u, 8u}) {
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
      Array za = embeddings(100 + trial, b, 6);
      Array zv = embeddings(200 + trial, b, 6);
      Tape t;
      Var loss = nce_loss(t.leaf(za, false), t.leaf(zv, false), cfg);
      EXPECT_NEAR(t.val(loss).data[0], nce_oracle(za, zv, cfg.tau), 1e-9)
          << "b=" << b << " trial=" << trial;
    }
  }
}

TEST(NceLoss, InvariantToEmbeddingScale) {
  ContrastiveConfig cfg;
  Array za = embeddings(1, 4, 6), zv = embeddings(2, 4, 6);
  Array za3 = za, zvh = zv;
  for (double& x : za3.data) x *= 3.0;
  for (double& x : zvh.data) x *= 0.5;
  Tape t;
  Var l1 = nce_loss(t.leaf(za, false), t.leaf(zv, false), cfg);
  Var l2 = nce_loss(t.leaf(za3, false), t.leaf(zvh, false), cfg);
  EXPECT_NEAR(t.val(l1).data[0], t.val(l2).data[0], 1e-10);
}

TEST(NceLoss, ArgumentOrderAndSymmetrizeFlagDontChangeTheValue) {
  ContrastiveConfig cfg;
  Array za = embeddings(3, 5, 6), zv = embeddings(4, 5, 6);
  Tape t;
  Var a = t.leaf(za, false), v = t.leaf(zv, false);
  double av = t.val(nce_loss(a, v, cfg)).data[0];
  double va = t.val(nce_loss(v, a, cfg)).data[0];
  EXPECT_NEAR(av, va, 1e-10);
  ContrastiveConfig sym = cfg;
  sym.symmetrize = true;
  EXPECT_NEAR(t.val(nce_loss(a, v, sym)).data[0], av, 1e-10);
}

TEST(NceLoss, GradientsMatchFiniteDifferences) {
  ContrastiveConfig cfg;
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Array za = embeddings(300 + trial, 3, 5);
    Array zv = embeddings(400 + trial, 3, 5);
    Tape t;
    Var a = t.leaf(za, true), v = t.leaf(zv, true);
    Var loss = nce_loss(a, v, cfg);
    t.backward(loss);
    Array ga = t.grad(a), gv = t.grad(v);
    auto f = [&](const std::vector<Array>& xs) {
      Tape t2;
      return t2.val(nce_loss(t2.leaf(xs[0], false), t2.leaf(xs[1], false), cfg))
          .data[0];
    };
    double err = oracle::fd_max_rel_err(f, {za, zv}, {ga, gv});
    EXPECT_LE(err, 1e-4) << "trial=" << trial;
  }
}

TEST(NceLoss, RejectsBadInputs) {
  Tape t;
  ContrastiveConfig cfg;
  Var a = t.leaf(embeddings(1, 3, 4), false);
  Var v = t.leaf(embeddings(2, 4, 4), false);
  EXPECT_THROW(nce_loss(a, v, cfg), std::invalid_argument);
  cfg.tau = 0.0;
  Var v2 = t.leaf(embeddings(3, 3, 4), false);
  EXPECT_THROW(nce_loss(a, v2, cfg), std::invalid_argument);
}

TEST(CrossEntropy, HandValue) {
  // rows: lse([1,2,3]) - 3 and lse([0,0,0]) - 0 = log 3, averaged.
  Tape t;
  Array logits = Array::from({2, 3}, {1, 2, 3, 0, 0, 0});
  Var loss = cross_entropy_loss(t.leaf(logits, false), {2, 0});
  const double expect =
      0.5 * ((std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0) +
             std::log(3.0));
  EXPECT_NEAR(t.val(loss).data[0], expect, 1e-13);
  EXPECT_NEAR(t.val(loss).data[0], 0.7531091265562452, 1e-12);
}

TEST(CrossEntropy, GradientsMatchFiniteDifferences) {
  const std::vector<std::size_t> labels{1, 0, 3, 2};
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    Array logits = embeddings(500 + trial, 4, 4);
    Tape t;
    Var lg = t.leaf(logits, true);
    t.backward(cross_entropy_loss(lg, labels));
    Array g = t.grad(lg);
    auto f = [&](const std::vector<Array>& xs) {
      Tape t2;
      return t2.val(cross_entropy_loss(t2.leaf(xs[0], false), labels)).data[0];
    };
    EXPECT_LE(oracle::fd_max_rel_err(f, {logits}, {g}), 1e-4);
  }
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  Tape t;
  Var lg = t.leaf(Array::zeros({2, 3}), false);
  EXPECT_THROW(cross_entropy_loss(lg, {0, 3}), std::invalid_argument);
  EXPECT_THROW(cross_entropy_loss(lg, {0}), std::invalid_argument);
}

TEST(BceWithLogits, HandValueAndGradients) {
  Tape t;
  Array logits = Array::zeros({1, 2});
  Array targets = Array::from({1, 2}, {1, 0});
  Var loss = bce_with_logits_loss(t.leaf(logits, false), targets);
  EXPECT_NEAR(t.val(loss).data[0], 2 * std::log(2.0), 1e-13);

  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    Array lg = embeddings(600 + trial, 3, 4);
    Array tg = Array::zeros({3, 4});
    Rng r(700 + trial);
    for (double& x : tg.data) x = r.uniform() < 0.5 ? 0.0 : 1.0;
    Tape t2;
    Var v = t2.leaf(lg, true);
    t2.backward(bce_with_logits_loss(v, tg));
    Array g = t2.grad(v);
    auto f = [&](const std::vector<Array>& xs) {
      Tape t3;
      return t3.val(bce_with_logits_loss(t3.leaf(xs[0], false), tg)).data[0];
    };
    EXPECT_LE(oracle::fd_max_rel_err(f, {lg}, {g}), 1e-4);
  }
}

TEST(BceWithLogits, RejectsNonBinaryTargets) {
  Tape t;
  Var lg = t.leaf(Array::zeros({1, 2}), false);
  EXPECT_THROW(bce_with_logits_loss(lg, Array::from({1, 2}, {0.5, 1.0})),
               std::invalid_argument);
}

TEST(Projector, MapsToRequestedDimension) {
  Tape t;
  ParamStore ps;
  Ctx c(t, ps, 11, false);
  Var x = t.constant(embeddings(1, 4, 32));
  Var z = projector(c, x, 64, 16, "proj.video");
  EXPECT_EQ(t.val(z).rows(), 4u);
  EXPECT_EQ(t.val(z).cols(), 16u);
  EXPECT_TRUE(ps.has("proj.video.fc1.w"));
  EXPECT_TRUE(ps.has("proj.video.fc2.b"));
}

TEST(Metrics, AlignmentOnConstructedPairs) {
  Array a = Array::from({2, 2}, {1, 0, 0, 2});
  EXPECT_DOUBLE_EQ(metrics::alignment(a, a), 1.0);
  Array b = Array::from({2, 2}, {0, 1, 2, 0});  // orthogonal to a, row-wise
  EXPECT_DOUBLE_EQ(metrics::alignment(a, b), 0.0);
}

TEST(Metrics, UniformityOnAntipodalAndCollapsedPoints) {
  Array antipodal = Array::from({2, 2}, {1, 0, -1, 0});
  EXPECT_NEAR(metrics::uniformity(antipodal), -8.0, 1e-12);  // d^2 = 4
  Array collapsed = Array::from({3, 2}, {1, 0, 1, 0, 1, 0});
  EXPECT_NEAR(metrics::uniformity(collapsed), 0.0, 1e-12);
}

TEST(Metrics, RetrievalTopOne) {
  Array id = Array::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_DOUBLE_EQ(metrics::retrieval_top1(id, id), 1.0);
  Array shifted = Array::from({3, 3}, {0, 1, 0, 0, 0, 1, 1, 0, 0});
  EXPECT_DOUBLE_EQ(metrics::retrieval_top1(id, shifted), 0.0);
  // One of three matches.
  Array partial = Array::from({3, 3}, {1, 0, 0, 0, 0, 1, 0, 1, 0});
  EXPECT_NEAR(metrics::retrieval_top1(id, partial), 1.0 / 3.0, 1e-15);
}
