#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "zorro/array.hpp"
#include "zorro/model_common.hpp"
#include "zorro/tape.hpp"

namespace zorro {

struct ContrastiveConfig {
  double tau = 0.08;
  bool include_fusion_terms = true;  // audio-fusion and video-fusion terms
  bool symmetrize = false;           // average the loss with its transpose
};

// Small MLP projection head mapping trunk outputs into the contrastive space.
// The hidden layer is normalized per-feature across the batch before the
// nonlinearity; this keeps the projected batch spread out and removes the
// degenerate optimum where every sample maps to one embedding (with plain
// linear layers that constant point is a stable fixed point of the pair loss,
// and small runs routinely fall into it and stop learning).
inline Var projector(Ctx& c, Var x, std::size_t hidden, std::size_t out_dim,
                     const std::string& prefix) {
  Var h = linear(c, x, hidden, prefix + ".fc1");
  Var g = c.P(prefix + ".bn.g", {hidden}, InitKind::ones);
  Var b = c.P(prefix + ".bn.b", {hidden}, InitKind::zeros);
  return linear(c, gelu(batch_norm_cols(h, g, b)), out_dim, prefix + ".fc2");
}

// Noise-contrastive loss over a batch of paired embeddings za, zv ([B x E]).
// Rows are L2-normalized, similarities are exp(za_i . zv_j / tau), and each
// positive pair competes against the *full* B x B table of pair similarities:
//
//   L = - sum_i log( exp(S_ii) / sum_{j,k} exp(S_jk) )
//     = B * logsumexp(S) - trace(S),   S_ij = za_i . zv_j / tau.
//
// Because the similarity is symmetric in its two arguments, swapping the
// embedding sets permutes S to its transpose and leaves the value unchanged;
// `symmetrize` still averages both orders for callers that want the
// literally-symmetric form.
inline Var nce_loss(Var za, Var zv, const ContrastiveConfig& cfg) {
  Tape& t = *za.tape;
  const Array& a = t.val(za);
  const Array& v = t.val(zv);
  require(a.ndim() == 2 && v.ndim() == 2 && a.rows() == v.rows() &&
              a.cols() == v.cols(),
          "nce_loss: embedding shapes disagree: ", shape_str(a), " vs ",
          shape_str(v));
  require(cfg.tau > 0, "nce_loss: tau must be positive, got ", cfg.tau);
  const std::size_t b = a.rows();
  auto one_direction = [&](Var x, Var y) {
    Var s = scale(matmul(l2_normalize_rows(x), transpose(l2_normalize_rows(y))),
                  1.0 / cfg.tau);
    Var total = scale(logsumexp_all(s), static_cast<double>(b));
    Var diag = sum(mul(s, t.constant(Array::identity(b))));
    return total - diag;
  };
  Var loss = one_direction(za, zv);
  if (cfg.symmetrize) loss = scale(loss + one_direction(zv, za), 0.5);
  return loss;
}

// Three-way contrastive objective tying audio, video and fusion embeddings:
// pairwise audio<->video plus (optionally) audio<->fusion and video<->fusion.
inline Var fusion_nce_loss(Var za, Var zv, Var zf, const ContrastiveConfig& cfg) {
  Var loss = nce_loss(za, zv, cfg);
  if (cfg.include_fusion_terms)
    loss = loss + nce_loss(za, zf, cfg) + nce_loss(zv, zf, cfg);
  return loss;
}

// Mean cross-entropy for single-label classification. logits [B x C],
// labels[i] in [0, C).
inline Var cross_entropy_loss(Var logits, const std::vector<std::size_t>& labels) {
  Tape& t = *logits.tape;
  const Array& lg = t.val(logits);
  require(lg.ndim() == 2, "cross_entropy: logits must be 2-d, got ", shape_str(lg));
  require(labels.size() == lg.rows(), "cross_entropy: ", labels.size(),
          " labels for ", lg.rows(), " rows");
  Array onehot = Array::zeros(lg.shape);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < lg.cols(), "cross_entropy: label ", labels[i],
            " out of range for ", lg.cols(), " classes");
    onehot(i, labels[i]) = 1.0;
  }
  Var lse = sum(logsumexp_rows(logits));
  Var picked = sum(mul(logits, t.constant(onehot)));
  return scale(lse - picked, 1.0 / static_cast<double>(lg.rows()));
}

// Mean-over-batch binary cross-entropy with logits for multi-label targets
// ([B x C] of 0/1): sum_c softplus(x) - y*x, averaged over rows.
inline Var bce_with_logits_loss(Var logits, const Array& targets) {
  Tape& t = *logits.tape;
  const Array& lg = t.val(logits);
  require(lg.shape == targets.shape, "bce: logits ", shape_str(lg),
          " vs targets ", Array::shape_str(targets.shape));
  for (double y : targets.data)
    require(y == 0.0 || y == 1.0, "bce: targets must be 0/1, got ", y);
  Var loss = sum(softplus(logits)) - sum(mul(logits, t.constant(targets)));
  return scale(loss, 1.0 / static_cast<double>(lg.rows()));
}

// ---- representation-quality metrics (plain arrays, no gradients) ----

namespace metrics {

// Mean cosine similarity of paired rows; 1.0 means perfectly aligned pairs.
inline double alignment(const Array& za, const Array& zv) {
  require(za.shape == zv.shape && za.ndim() == 2, "alignment: shapes disagree: ",
          shape_str(za), " vs ", shape_str(zv));
  Array a = l2_normalize_rows_eval(za);
  Array v = l2_normalize_rows_eval(zv);
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) dot += a(i, j) * v(i, j);
    total += dot;
  }
  return total / static_cast<double>(a.rows());
}

// log mean_{i != j} exp(-2 ||zhat_i - zhat_j||^2): more negative means the
// normalized embeddings spread more evenly over the sphere; near 0 means they
// have collapsed onto one point.
inline double uniformity(const Array& z) {
  require(z.ndim() == 2 && z.rows() >= 2, "uniformity: need at least 2 rows, got ",
          shape_str(z));
  Array n = l2_normalize_rows_eval(z);
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n.rows(); ++i)
    for (std::size_t j = 0; j < n.rows(); ++j) {
      if (i == j) continue;
      double d2 = 0.0;
      for (std::size_t k = 0; k < n.cols(); ++k) {
        double d = n(i, k) - n(j, k);
        d2 += d * d;
      }
      acc += std::exp(-2.0 * d2);
      ++pairs;
    }
  return std::log(acc / static_cast<double>(pairs));
}

// Fraction of queries za_i whose most-similar zv_j (cosine) is the paired
// j == i. Ties resolve to the lowest index.
inline double retrieval_top1(const Array& za, const Array& zv) {
  require(za.shape == zv.shape && za.ndim() == 2, "retrieval: shapes disagree: ",
          shape_str(za), " vs ", shape_str(zv));
  Array a = l2_normalize_rows_eval(za);
  Array v = l2_normalize_rows_eval(zv);
  Array sims = matmul_eval(a, transpose_eval(v));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < sims.rows(); ++i)
    if (argmax(&sims.data[i * sims.cols()], sims.cols()) == i) ++hits;
  return static_cast<double>(hits) / static_cast<double>(sims.rows());
}

}  // namespace metrics

}  // namespace zorro
