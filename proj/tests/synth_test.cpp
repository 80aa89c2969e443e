// The paired-data generator: determinism, balanced labels, orthonormal class
// anchors, exact latent recovery at zero noise (via an independent
// least-squares solve), coupling semantics, and modality dropping.
#include <gtest/gtest.h>

#include <map>
#include <vector>

#include "zorro/objectives.hpp"
#include "zorro/synth.hpp"

using namespace zorro;

namespace {

// Normal-equations least squares (W^T W) u = W^T x, solved by Gaussian
// elimination with partial pivoting. Independent of the library's math.
std::vector<double> lstsq(const Array& w, const Array& x) {
  const std::size_t n = w.rows(), d = w.cols();
  std::vector<std::vector<double>> a(d, std::vector<double>(d + 1, 0.0));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t r = 0; r < n; ++r) a[i][j] += w(r, i) * w(r, j);
    for (std::size_t r = 0; r < n; ++r) a[i][d] += w(r, i) * x.data[r];
  }
  for (std::size_t col = 0; col < d; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < d; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[col], a[piv]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t cc = col; cc <= d; ++cc) a[r][cc] -= f * a[col][cc];
    }
  }
  std::vector<double> u(d);
  for (std::size_t i = 0; i < d; ++i) u[i] = a[i][d] / a[i][i];
  return u;
}

Array recover_latents(const SynthGenerator& gen, const std::vector<Array>& xs,
                      const Array& w) {
  Array out = Array::zeros({xs.size(), gen.spec().latent_dim});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::vector<double> u = lstsq(w, xs[i].reshaped({xs[i].numel()}));
    for (std::size_t k = 0; k < u.size(); ++k) out(i, k) = u[k];
  }
  return out;
}

SynthSpec base_spec() {
  SynthSpec s;
  s.seed = 77;
  return s;
}

}  // namespace

TEST(Synth, DeterministicAcrossInstancesAndDistinctAcrossBatches) {
  SynthGenerator g1(base_spec()), g2(base_spec());
  SynthBatch a = g1.generate(16, 3), b = g2.generate(16, 3);
  ASSERT_EQ(a.size(), 16u);
  EXPECT_EQ(a.labels, b.labels);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(max_abs_diff(a.video[i], b.video[i]), 0.0);
    EXPECT_EQ(max_abs_diff(a.audio[i], b.audio[i]), 0.0);
  }
  SynthBatch c = g1.generate(16, 4);
  EXPECT_GT(max_abs_diff(a.video[0], c.video[0]), 0.0);

  SynthSpec other = base_spec();
  other.seed = 78;
  SynthBatch d = SynthGenerator(other).generate(16, 3);
  EXPECT_GT(max_abs_diff(a.video[0], d.video[0]), 0.0);
}

TEST(Synth, LabelsAreBalancedWithinOne) {
  SynthGenerator gen(base_spec());
  for (std::size_t b : {48u, 20u, 8u}) {
    SynthBatch batch = gen.generate(b, 0);
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t l : batch.labels) ++counts[l];
    std::size_t lo = b, hi = 0;
    for (std::size_t cls = 0; cls < 8; ++cls) {
      lo = std::min(lo, counts[cls]);
      hi = std::max(hi, counts[cls]);
    }
    EXPECT_LE(hi - lo, 1u) << "batch_size=" << b;
  }
  // Shuffled, not striped: some batch must deviate from 0,1,2,...
  bool any_nonstriped = false;
  for (std::uint64_t bi = 0; bi < 4; ++bi) {
    SynthBatch batch = gen.generate(16, bi);
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (batch.labels[i] != i % 8) any_nonstriped = true;
  }
  EXPECT_TRUE(any_nonstriped);
}

TEST(Synth, ClassAnchorsAreOrthonormal) {
  SynthGenerator gen(base_spec());
  const Array& a = gen.anchors();
  ASSERT_EQ(a.rows(), 8u);
  ASSERT_EQ(a.cols(), 8u);
  Array gram = matmul_eval(a, transpose_eval(a));
  EXPECT_LE(max_abs_diff(gram, Array::identity(8)), 1e-10);
}

TEST(Synth, ZeroNoiseLatentsRecoverExactlyAndAgreeAcrossModalities) {
  SynthSpec spec = base_spec();
  spec.noise_sigma = 0.0;
  SynthGenerator gen(spec);
  SynthBatch batch = gen.generate(16, 0);
  Array uv = recover_latents(gen, batch.video, gen.video_map());
  Array ua = recover_latents(gen, batch.audio, gen.audio_map());
  EXPECT_LE(max_abs_diff(uv, ua), 1e-8);

  // Recovered latents point toward their class anchor.
  const Array& anchors = gen.anchors();
  double mean_cos = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    double dot = 0.0, nu = 0.0;
    for (std::size_t k = 0; k < 8u; ++k) {
      dot += uv(i, k) * anchors(batch.labels[i], k);
      nu += uv(i, k) * uv(i, k);
    }
    const double cosine = dot / std::sqrt(nu);
    EXPECT_GT(cosine, 0.4) << "sample " << i;
    mean_cos += cosine;
  }
  EXPECT_GT(mean_cos / 16.0, 0.7);
}

TEST(Synth, CouplingControlsCrossModalRetrieval) {
  SynthSpec coupled = base_spec();
  coupled.coupling_rho = 1.0;
  SynthGenerator cg(coupled);
  SynthBatch cb = cg.generate(64, 0);
  for (bool c : cb.coupled) EXPECT_TRUE(c);
  Array cv = recover_latents(cg, cb.video, cg.video_map());
  Array ca = recover_latents(cg, cb.audio, cg.audio_map());
  EXPECT_DOUBLE_EQ(metrics::retrieval_top1(cv, ca), 1.0);

  SynthSpec uncoupled = base_spec();
  uncoupled.coupling_rho = 0.0;
  SynthGenerator ug(uncoupled);
  SynthBatch ub = ug.generate(64, 0);
  for (bool c : ub.coupled) EXPECT_FALSE(c);
  Array uv = recover_latents(ug, ub.video, ug.video_map());
  Array ua = recover_latents(ug, ub.audio, ug.audio_map());
  EXPECT_LE(metrics::retrieval_top1(uv, ua), 0.15);  // chance is 1/64

  SynthSpec half = base_spec();
  half.coupling_rho = 0.5;
  SynthBatch hb = SynthGenerator(half).generate(200, 0);
  std::size_t n_coupled = 0;
  for (bool c : hb.coupled) n_coupled += c ? 1 : 0;
  EXPECT_GT(n_coupled, 60u);
  EXPECT_LT(n_coupled, 140u);
}

TEST(Synth, NoiseSigmaScalesPixelPerturbation) {
  SynthSpec clean = base_spec();
  SynthSpec noisy = base_spec();
  noisy.noise_sigma = 2.0;
  SynthBatch a = SynthGenerator(clean).generate(8, 0);
  SynthBatch b = SynthGenerator(noisy).generate(8, 0);
  double ss = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < 8u; ++i)
    for (std::size_t j = 0; j < a.video[i].numel(); ++j) {
      const double d = b.video[i].data[j] - a.video[i].data[j];
      ss += d * d;
      ++n;
    }
  const double var = ss / double(n);
  EXPECT_GT(var, 4.0 * 0.7);
  EXPECT_LT(var, 4.0 * 1.3);
}

TEST(Synth, DropModalityZeroesAndFlagsIdempotently) {
  SynthGenerator gen(base_spec());
  SynthBatch batch = gen.generate(6, 1);
  Array audio_before = batch.audio[2];
  SynthBatch dropped = drop_modality(batch, Stream::video);
  SynthBatch twice = drop_modality(dropped, Stream::video);
  for (std::size_t i = 0; i < dropped.size(); ++i) {
    EXPECT_FALSE(dropped.video_present[i]);
    EXPECT_TRUE(dropped.audio_present[i]);
    EXPECT_EQ(max_abs(dropped.video[i]), 0.0);
    EXPECT_EQ(max_abs_diff(twice.video[i], dropped.video[i]), 0.0);
  }
  EXPECT_EQ(max_abs_diff(dropped.audio[2], audio_before), 0.0);
  EXPECT_THROW(drop_modality(batch, Stream::fusion), std::invalid_argument);
}

TEST(Synth, SpecValidation) {
  SynthSpec s = base_spec();
  s.latent_dim = 4;  // < n_classes
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = base_spec();
  s.coupling_rho = 1.5;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = base_spec();
  s.noise_sigma = -1.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}
