// Self-checking suite for the masked multimodal models: value- and
// gradient-level stream isolation, architectural equivalences, attention and
// loss fidelity against directly-summed references, mask reachability against
// golden matrices and a graph-search oracle, and the representation-collapse
// experiment across masking variants. Every check returns a structured
// record; the report serializes to plain text and parses back.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "train.hpp"

namespace zorro {

// ---------------------------------------------------------------------------
// Report structure.
// ---------------------------------------------------------------------------

struct CheckResult {
  std::string name;    // what was checked (no spaces)
  std::string config;  // which model/config variant (no spaces)
  bool pass = false;
  std::vector<std::pair<std::string, std::string>> metrics;

  void add(const std::string& key, double value) {
    metrics.emplace_back(key, format_double(value));
  }
  void add(const std::string& key, const std::string& value) {
    metrics.emplace_back(key, value);
  }
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  bool all_pass() const {
    for (const CheckResult& c : checks)
      if (!c.pass) return false;
    return true;
  }

  std::size_t failures() const {
    std::size_t n = 0;
    for (const CheckResult& c : checks)
      if (!c.pass) ++n;
    return n;
  }

  // One record per line: "check name=<n> config=<c> pass=<p> k=v k=v ...".
  std::string to_text() const {
    std::string out;
    for (const CheckResult& c : checks) {
      out += "check name=" + c.name + " config=" + c.config +
             " pass=" + (c.pass ? "true" : "false");
      for (const auto& [k, v] : c.metrics) out += " " + k + "=" + v;
      out += "\n";
    }
    return out;
  }

  static VerifyReport parse_text(const std::string& text) {
    VerifyReport rep;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string tok;
      ls >> tok;
      require(tok == "check", "report: line ", lineno,
              " does not start with 'check': ", line);
      CheckResult c;
      std::size_t field = 0;
      while (ls >> tok) {
        const std::size_t eq = tok.find('=');
        require(eq != std::string::npos, "report: line ", lineno,
                " has a token without '=': ", tok);
        const std::string key = tok.substr(0, eq);
        const std::string value = tok.substr(eq + 1);
        if (field == 0) {
          require(key == "name", "report: line ", lineno, " lacks name=");
          c.name = value;
        } else if (field == 1) {
          require(key == "config", "report: line ", lineno, " lacks config=");
          c.config = value;
        } else if (field == 2) {
          require(key == "pass", "report: line ", lineno, " lacks pass=");
          require(value == "true" || value == "false", "report: line ", lineno,
                  " has pass=", value);
          c.pass = value == "true";
        } else {
          c.metrics.emplace_back(key, value);
        }
        ++field;
      }
      require(field >= 3, "report: line ", lineno, " is incomplete: ", line);
      rep.checks.push_back(std::move(c));
    }
    return rep;
  }
};

// ---------------------------------------------------------------------------
// Shared toy-model construction and random inputs.
// ---------------------------------------------------------------------------

inline RunConfig toy_run_config(Arch arch, MaskKind kind,
                                WeightSharing sharing = WeightSharing::shared) {
  RunConfig cfg;
  cfg.arch = arch;
  cfg.mask.kind = kind;
  cfg.sharing = sharing;
  cfg.include_fusion_terms = kind != MaskKind::two_streams;
  return cfg;
}

inline Array random_video_input(Rng& r, const RunConfig& cfg) {
  return r.normals(
      {cfg.video.frames, cfg.video.height, cfg.video.width, cfg.video.channels});
}

inline Array random_audio_input(Rng& r, const RunConfig& cfg) {
  return r.normals({cfg.audio.time, cfg.audio.bins});
}

// ---------------------------------------------------------------------------
// Isolation: replacing one modality must not move the other's output.
// ---------------------------------------------------------------------------

struct IsolationStats {
  double max_dv = 0.0;  // largest |change in o_v| under audio replacement
  double max_da = 0.0;  // largest |change in o_a| under video replacement
};

inline IsolationStats check_isolation(AnyModel& model, std::size_t trials,
                                      std::uint64_t seed) {
  const RunConfig& cfg = model.config();
  IsolationStats st;
  Rng root(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng r = root.fork(t);
    Rng rv1 = r.fork("v1"), rv2 = r.fork("v2");
    Rng ra1 = r.fork("a1"), ra2 = r.fork("a2");
    const Array v1 = random_video_input(rv1, cfg);
    const Array v2 = random_video_input(rv2, cfg);
    const Array a1 = random_audio_input(ra1, cfg);
    const Array a2 = random_audio_input(ra2, cfg);
    const ZorroOutputs base = model.forward_eval(v1, a1);
    const ZorroOutputs swap_a = model.forward_eval(v1, a2);
    const ZorroOutputs swap_v = model.forward_eval(v2, a1);
    st.max_dv = std::max(st.max_dv, max_abs_diff(base.o_v, swap_a.o_v));
    st.max_da = std::max(st.max_da, max_abs_diff(base.o_a, swap_v.o_a));
  }
  return st;
}

// ---------------------------------------------------------------------------
// Gradient isolation: the cross-modal gradient must vanish identically.
// ---------------------------------------------------------------------------

struct GradIsolationStats {
  double video_grad = 0.0;  // max |d sum(o_a) / d video input|
  double audio_grad = 0.0;  // max |d sum(o_v) / d audio input|
};

inline GradIsolationStats check_gradient_isolation(AnyModel& model,
                                                   std::uint64_t seed) {
  const RunConfig& cfg = model.config();
  Rng r(seed);
  Rng rv = r.fork("video"), ra = r.fork("audio");
  const Array video = random_video_input(rv, cfg);
  const Array audio = random_audio_input(ra, cfg);
  GradIsolationStats st;
  {
    Tape tape;
    Ctx c = model.make_ctx(tape);
    Var v = tape.leaf(video, true), a = tape.leaf(audio, true);
    ZorroVars z = model.forward(c, v, a);
    tape.backward(sum(z.o_a));
    st.video_grad = max_abs(tape.grad(v));
  }
  {
    Tape tape;
    Ctx c = model.make_ctx(tape);
    Var v = tape.leaf(video, true), a = tape.leaf(audio, true);
    ZorroVars z = model.forward(c, v, a);
    tape.backward(sum(z.o_v));
    st.audio_grad = max_abs(tape.grad(a));
  }
  return st;
}

namespace detail {

// Relative error with a floor tied to what central differences can resolve:
// evaluating f to machine precision quantizes (f(x+h)-f(x-h))/2h in steps of
// ulp(f)/2h, so coordinates whose gradient sits below ~1e-6 of the function
// magnitude are compared against that floor instead of their own size.
inline double rel_err(double fd, double an, double f_scale = 1.0) {
  const double floor = 1e-6 * std::max(1.0, std::abs(f_scale));
  const double denom = std::max({floor, std::abs(fd), std::abs(an)});
  return std::abs(fd - an) / denom;
}

}  // namespace detail

// Central finite differences on a handful of video-input coordinates,
// compared with the reverse-mode gradient of sum(o_a). For isolating masks
// both must be exactly zero; for leaky masks both must agree to fd_tol.
inline double fd_crosscheck_video_grad(AnyModel& model, std::uint64_t seed,
                                       std::size_t n_coords = 4,
                                       double h = 1e-5) {
  const RunConfig& cfg = model.config();
  Rng r(seed);
  Rng rv = r.fork("video"), ra = r.fork("audio");
  Array video = random_video_input(rv, cfg);
  const Array audio = random_audio_input(ra, cfg);

  Array grad;
  {
    Tape tape;
    Ctx c = model.make_ctx(tape);
    Var v = tape.leaf(video, true), a = tape.leaf(audio, false);
    ZorroVars z = model.forward(c, v, a);
    tape.backward(sum(z.o_a));
    grad = tape.grad(v);
  }
  auto value = [&](const Array& vid) {
    const ZorroOutputs o = model.forward_eval(vid, audio);
    double s = 0.0;
    for (double d : o.o_a.data) s += d;
    return s;
  };
  Rng rc = r.fork("coords");
  double worst = 0.0;
  for (std::size_t k = 0; k < n_coords; ++k) {
    const std::size_t i =
        static_cast<std::size_t>(rc.uniform() * static_cast<double>(video.numel())) %
        video.numel();
    const double keep = video.data[i];
    video.data[i] = keep + h;
    const double up = value(video);
    video.data[i] = keep - h;
    const double dn = value(video);
    video.data[i] = keep;
    const double fd = (up - dn) / (2.0 * h);
    if (fd == 0.0 && grad.data[i] == 0.0) continue;  // exact agreement
    worst = std::max(worst, detail::rel_err(fd, grad.data[i]));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Attention fidelity: row sums and the direct multiplicative formula.
// ---------------------------------------------------------------------------

struct AttentionFidelityStats {
  double max_row_sum_err = 0.0;
  double max_formula_diff = 0.0;
};

inline AttentionFidelityStats check_attention_fidelity(std::size_t cases,
                                                       std::uint64_t seed) {
  AttentionFidelityStats st;
  Rng root(seed);
  for (std::size_t t = 0; t < cases; ++t) {
    Rng r = root.fork(t);
    const std::size_t n = 2 + t % 5, m = 2 + (t / 5) % 6;
    Rng rl = r.fork("logits");
    Array logits = rl.normals({n, m}, 2.0);
    Array mask = Array::zeros({n, m});
    Rng rm = r.fork("mask");
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t allowed = 0;
      for (std::size_t j = 0; j < m; ++j) {
        mask(i, j) = rm.uniform() < 0.6 ? 1.0 : 0.0;
        if (mask(i, j) == 1.0) ++allowed;
      }
      if (allowed == 0) mask(i, t % m) = 1.0;  // no isolated queries
    }
    const Array out = softmax_masked_eval(logits, mask);
    for (std::size_t i = 0; i < n; ++i) {
      // direct, unstabilized transcription: a_ij = m_ij e^{l_ij} / sum_k ...
      double denom = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        denom += mask(i, j) * std::exp(logits(i, j));
      double row_sum = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double direct = mask(i, j) * std::exp(logits(i, j)) / denom;
        st.max_formula_diff =
            std::max(st.max_formula_diff, std::abs(direct - out(i, j)));
        if (mask(i, j) == 1.0) row_sum += out(i, j);
      }
      st.max_row_sum_err = std::max(st.max_row_sum_err, std::abs(row_sum - 1.0));
    }
  }
  return st;
}

// Masked softmax under an all-ones mask against the independently written
// plain softmax; elementwise identical is the requirement.
inline double check_unmasked_softmax_equivalence(std::size_t cases,
                                                 std::uint64_t seed) {
  double worst = 0.0;
  Rng root(seed);
  for (std::size_t t = 0; t < cases; ++t) {
    Rng r = root.fork(t);
    const std::size_t n = 2 + t % 4, m = 2 + t % 7;
    Array logits = r.normals({n, m}, 3.0);
    Tape tape;
    Var l = tape.leaf(logits, false);
    const Array& plain = tape.val(softmax_rows(l));
    const Array& masked =
        tape.val(softmax_masked(l, Array::full(logits.shape, 1.0)));
    worst = std::max(worst, max_abs_diff(plain, masked));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Contrastive-loss fidelity against a direct summation.
// ---------------------------------------------------------------------------

namespace detail {

// Plain-double transcription of the pair objective: rows normalized by hand,
// similarities exponentiated and summed directly, no log-sum-exp tricks.
inline double nce_direct(const Array& za, const Array& zv, double tau) {
  const std::size_t b = za.rows(), e = za.cols();
  auto norm_row = [&](const Array& z, std::size_t i, std::size_t j) {
    double sq = 0.0;
    for (std::size_t k = 0; k < e; ++k) sq += z(i, k) * z(i, k);
    return z(i, j) / std::sqrt(sq);
  };
  double denom = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < e; ++k)
        dot += norm_row(za, i, k) * norm_row(zv, j, k);
      denom += std::exp(dot / tau);
    }
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < e; ++k)
      dot += norm_row(za, i, k) * norm_row(zv, i, k);
    loss += std::log(denom) - dot / tau;
  }
  return loss;
}

inline double nce_model_value(const Array& za, const Array& zv,
                              const ContrastiveConfig& cc) {
  Tape tape;
  Var a = tape.leaf(za, false), v = tape.leaf(zv, false);
  return tape.val(nce_loss(a, v, cc)).data[0];
}

}  // namespace detail

struct LossFidelityStats {
  double max_pair_diff = 0.0;    // nce vs direct summation
  double max_fusion_diff = 0.0;  // three-way sum vs three direct sums
  double analytic_pair_err = 0.0;
  double analytic_fusion_err = 0.0;
};

inline LossFidelityStats check_loss_fidelity(std::size_t cases,
                                             std::uint64_t seed) {
  LossFidelityStats st;
  ContrastiveConfig cc;
  cc.tau = 0.08;
  Rng root(seed);
  for (std::size_t t = 0; t < cases; ++t) {
    Rng r = root.fork(t);
    const std::size_t b = 2 + t % 7;  // B <= 8
    const std::size_t e = 3 + t % 5;
    Rng ra = r.fork("a"), rv = r.fork("v"), rf = r.fork("f");
    const Array za = ra.normals({b, e});
    const Array zv = rv.normals({b, e});
    const Array zf = rf.normals({b, e});
    st.max_pair_diff =
        std::max(st.max_pair_diff,
                 std::abs(detail::nce_model_value(za, zv, cc) -
                          detail::nce_direct(za, zv, cc.tau)));
    Tape tape;
    Var a = tape.leaf(za, false), v = tape.leaf(zv, false),
        f = tape.leaf(zf, false);
    ContrastiveConfig cf = cc;
    cf.include_fusion_terms = true;
    const double model3 = tape.val(fusion_nce_loss(a, v, f, cf)).data[0];
    const double direct3 = detail::nce_direct(za, zv, cc.tau) +
                           detail::nce_direct(za, zf, cc.tau) +
                           detail::nce_direct(zv, zf, cc.tau);
    st.max_fusion_diff =
        std::max(st.max_fusion_diff, std::abs(model3 - direct3));
  }
  // Analytic pin: B = 2, all four pair similarities equal. The loss reduces
  // to 2 log 4, and the three-way version to three times that.
  Array u = Array::zeros({2, 4});
  u(0, 0) = 1.0;
  u(1, 0) = 1.0;
  const double expect = 2.0 * std::log(4.0);
  st.analytic_pair_err =
      std::abs(detail::nce_model_value(u, u, cc) - expect);
  {
    Tape tape;
    Var a = tape.leaf(u, false), v = tape.leaf(u, false),
        f = tape.leaf(u, false);
    ContrastiveConfig cf = cc;
    cf.include_fusion_terms = true;
    st.analytic_fusion_err =
        std::abs(tape.val(fusion_nce_loss(a, v, f, cf)).data[0] - 3.0 * expect);
  }
  return st;
}

// ---------------------------------------------------------------------------
// Model-loss gradients against central finite differences.
// ---------------------------------------------------------------------------

inline double check_model_loss_fd(const RunConfig& cfg, std::size_t n_coords,
                                  std::uint64_t seed, double h = 1e-5) {
  AnyModel model(cfg);
  SynthGenerator gen(cfg.synth_spec());
  SynthBatch batch = gen.generate(std::max<std::size_t>(cfg.batch_size, 2), 0);

  // Differentiate at a generic point rather than the symmetric init: the
  // init can sit where batch statistics in the contrastive projector are
  // nearly degenerate (all samples mapping to almost the same activations),
  // and central differences at h=1e-5 are unreliable in that high-curvature
  // corner even though the analytic gradient is exact.
  materialize_training_params(cfg, model);
  {
    Rng jitter(seed ^ 0x5bf03635ull);
    for (const auto& [name, a] : model.params().all()) {
      Array noise = jitter.normals(a.shape, 0.1);
      Array& p = model.params().at(name);
      for (std::size_t i = 0; i < p.numel(); ++i) p.data[i] += noise.data[i];
    }
  }

  std::map<std::string, Array> grads;
  {
    Tape tape;
    Ctx c = model.make_ctx(tape);
    Var loss = pretrain_loss(c, model, batch, cfg);
    tape.backward(loss);
    grads = c.grads();
  }
  auto value = [&] {
    Tape tape;
    Ctx c = model.make_ctx(tape, /*trainable=*/false);
    return tape.val(pretrain_loss(c, model, batch, cfg)).data[0];
  };
  const double f_scale = value();

  std::vector<std::pair<std::string, std::size_t>> coords;
  for (const auto& [name, g] : grads)
    for (std::size_t i = 0; i < g.numel(); ++i) coords.emplace_back(name, i);
  Rng r(seed);
  double worst = 0.0;
  for (std::size_t k = 0; k < n_coords; ++k) {
    const auto& [name, idx] =
        coords[static_cast<std::size_t>(r.uniform() *
                                        static_cast<double>(coords.size())) %
               coords.size()];
    Array& p = model.params().at(name);
    const double keep = p.data[idx];
    p.data[idx] = keep + h;
    const double up = value();
    p.data[idx] = keep - h;
    const double dn = value();
    p.data[idx] = keep;
    const double fd = (up - dn) / (2.0 * h);
    worst = std::max(worst, detail::rel_err(fd, grads.at(name).data[idx], f_scale));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Equivalences.
// ---------------------------------------------------------------------------

// Same seed, same names: the two_streams model is the zorro model minus the
// fusion tokens, so unimodal outputs must agree exactly.
inline std::pair<double, double> check_two_streams_equivalence(
    Arch arch, WeightSharing sharing, std::uint64_t seed,
    std::size_t trials = 3) {
  RunConfig zorro_cfg = toy_run_config(arch, MaskKind::zorro, sharing);
  RunConfig two_cfg = toy_run_config(arch, MaskKind::two_streams, sharing);
  AnyModel mz(zorro_cfg), mt(two_cfg);
  double dv = 0.0, da = 0.0;
  Rng root(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng r = root.fork(t);
    Rng rv = r.fork("v"), ra = r.fork("a");
    const Array video = random_video_input(rv, zorro_cfg);
    const Array audio = random_audio_input(ra, zorro_cfg);
    const ZorroOutputs oz = mz.forward_eval(video, audio);
    const ZorroOutputs ot = mt.forward_eval(video, audio);
    dv = std::max(dv, max_abs_diff(oz.o_v, ot.o_v));
    da = std::max(da, max_abs_diff(oz.o_a, ot.o_a));
  }
  return {dv, da};
}

namespace detail {

// Attention written without any mask machinery: plain softmax over all keys.
inline Var replica_attention(Ctx& c, Var x, std::size_t heads,
                             const std::string& prefix) {
  const std::size_t dm = c.tape.val(x).cols();
  const std::size_t dh = dm / heads;
  Var q = linear(c, x, dm, prefix + ".q");
  Var k = linear(c, x, dm, prefix + ".k");
  Var v = linear(c, x, dm, prefix + ".v");
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var logits = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    outs.push_back(matmul(softmax_rows(logits), vh));
  }
  Var core = heads == 1 ? outs[0] : concat_cols(outs);
  return linear(c, core, dm, prefix + ".o");
}

// A dense transformer trunk with no masks anywhere, sharing parameter names
// with the model under test.
inline Var replica_unmasked_encode(Ctx& c, const RunConfig& cfg, Var video,
                                   Var audio) {
  const std::size_t patch_v = cfg.video_patch.t * cfg.video_patch.h *
                              cfg.video_patch.w * cfg.video.channels;
  const std::size_t patch_a = cfg.audio_patch.t * cfg.audio_patch.s;
  Var ev = embed_patches(c, video, video_patch_indices(cfg.video, cfg.video_patch),
                         video_token_count(cfg.video, cfg.video_patch), patch_v,
                         cfg.d_model, "embed.video");
  Var ea = embed_patches(c, audio, audio_patch_indices(cfg.audio, cfg.audio_patch),
                         audio_token_count(cfg.audio, cfg.audio_patch), patch_a,
                         cfg.d_model, "embed.audio");
  std::vector<Var> rows{ev, ea};
  if (cfg.n_fusion > 0)
    rows.push_back(c.P("fusion.tokens", {cfg.n_fusion, cfg.d_model}));
  Var x = concat_rows(rows);
  const std::size_t hidden =
      static_cast<std::size_t>(cfg.d_model * cfg.mlp_ratio);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string prefix = "trunk.layer" + std::to_string(i);
    Var n1 = layer_norm_p(c, x, prefix + ".ln1");
    x = x + replica_attention(c, n1, cfg.heads, prefix + ".attn");
    x = x + mlp(c, layer_norm_p(c, x, prefix + ".ln2"), hidden, prefix + ".mlp");
  }
  return x;
}

}  // namespace detail

// With the input-level mask (all ones) the trunk must equal a dense
// transformer that has no mask machinery at all.
inline double check_unmasked_trunk_equivalence(std::uint64_t seed) {
  RunConfig cfg = toy_run_config(Arch::vit, MaskKind::input_level);
  ZorroViT model(cfg.vit_config(), cfg.seed);
  Rng r(seed);
  Rng rv = r.fork("v"), ra = r.fork("a");
  const Array video = random_video_input(rv, cfg);
  const Array audio = random_audio_input(ra, cfg);
  Tape tape;
  Ctx c = model.make_ctx(tape, /*trainable=*/false);
  Var v = tape.leaf(video, false), a = tape.leaf(audio, false);
  const Array& model_tokens = tape.val(model.encode(c, v, a));
  const Array& replica_tokens =
      tape.val(detail::replica_unmasked_encode(c, cfg, v, a));
  return max_abs_diff(model_tokens, replica_tokens);
}

// The o_F decoder query reads fusion columns only, so replacing the final
// unimodal token states must leave it untouched while moving o_v and o_g.
struct FusionInvarianceStats {
  double d_of = 0.0, d_ov = 0.0, d_og = 0.0;
};

inline FusionInvarianceStats check_fusion_readout_invariance(
    std::uint64_t seed) {
  RunConfig cfg = toy_run_config(Arch::vit, MaskKind::zorro);
  ZorroViT model(cfg.vit_config(), cfg.seed);
  const StreamLayout l = model.layout();
  Rng r(seed);
  Rng rv = r.fork("v"), ra = r.fork("a"), rp = r.fork("perturb");
  const Array video = random_video_input(rv, cfg);
  const Array audio = random_audio_input(ra, cfg);

  Array tokens;
  {
    Tape tape;
    Ctx c = model.make_ctx(tape, /*trainable=*/false);
    tokens = tape.val(
        model.encode(c, tape.leaf(video, false), tape.leaf(audio, false)));
  }
  Array perturbed = tokens;
  for (std::size_t i = 0; i < l.fusion_begin(); ++i)
    for (std::size_t j = 0; j < cfg.d_model; ++j)
      perturbed(i, j) += rp.normals({1}).data[0];

  auto decode = [&](const Array& tok) {
    Tape tape;
    Ctx c = model.make_ctx(tape, /*trainable=*/false);
    ZorroVars z = model.decode_only(c, tape.leaf(tok, false));
    struct Out {
      Array o_v, o_f, o_g;
    } out{tape.val(z.o_v), tape.val(z.o_f), tape.val(z.o_g)};
    return out;
  };
  const auto base = decode(tokens);
  const auto moved = decode(perturbed);
  FusionInvarianceStats st;
  st.d_of = max_abs_diff(base.o_f, moved.o_f);
  st.d_ov = max_abs_diff(base.o_v, moved.o_v);
  st.d_og = max_abs_diff(base.o_g, moved.o_g);
  return st;
}

// ---------------------------------------------------------------------------
// Reachability: golden matrices for the (2,2,1) layout plus a graph-search
// oracle on random mask stacks.
// ---------------------------------------------------------------------------

namespace detail {

// Who can influence whom, answered by explicit path search over the layered
// graph: an edge (layer l, token i) <- (layer l-1, token k) exists when the
// layer-l mask allows i to read k, or when i == k (residual path).
inline bool influence_path_exists(const std::vector<AttentionMask>& masks,
                                  std::size_t from, std::size_t to) {
  const std::size_t n = masks[0].m.rows();
  std::vector<bool> cur(n, false);
  cur[to] = true;  // start at the final-layer token we are asking about
  for (std::size_t li = masks.size(); li-- > 0;) {
    std::vector<bool> prev(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      if (!cur[i]) continue;
      prev[i] = true;  // residual connection
      for (std::size_t k = 0; k < n; ++k)
        if (masks[li].m(i, k) == 1.0) prev[k] = true;
    }
    cur = std::move(prev);
  }
  return cur[from];
}

}  // namespace detail

inline bool check_reachability_bfs_oracle(std::size_t trials,
                                          std::uint64_t seed) {
  Rng root(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng r = root.fork(t);
    const std::size_t n = 2 + t % 5;
    const std::size_t depth = 1 + t % 3;
    std::vector<AttentionMask> masks;
    for (std::size_t l = 0; l < depth; ++l) {
      Array m = Array::zeros({n, n});
      Rng rl = r.fork(l);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          m(i, j) = rl.uniform() < 0.4 ? 1.0 : 0.0;
      masks.push_back(AttentionMask{std::move(m)});
    }
    const Array closure = reachability(masks);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const bool path = detail::influence_path_exists(masks, j, i);
        if ((closure(i, j) == 1.0) != path) return false;
      }
  }
  return true;
}

struct ReachabilityGoldenResult {
  bool ok = false;
  std::string detail;
};

// Layout (2,2,1), tokens [v0 v1 a0 a1 f0]; golden matrices derived by hand.
inline ReachabilityGoldenResult check_reachability_golden(MaskKind kind) {
  const bool has_fusion = kind != MaskKind::two_streams;
  StreamLayout layout{2, 2, has_fusion ? std::size_t{1} : std::size_t{0}};
  MaskConfig mc;
  mc.kind = kind;
  mc.fusion_start_layer = 0;

  auto closure_at_depth = [&](std::size_t depth) {
    std::vector<AttentionMask> masks;
    for (std::size_t l = 0; l < depth; ++l)
      masks.push_back(build_self_mask(layout, mc, l));
    return reachability(masks);
  };
  auto matches = [&](const Array& got, const std::vector<double>& want) {
    if (got.numel() != want.size()) return false;
    for (std::size_t i = 0; i < want.size(); ++i)
      if (got.data[i] != want[i]) return false;
    return true;
  };

  ReachabilityGoldenResult res;
  switch (kind) {
    case MaskKind::zorro: {
      // Streams stay pure at any depth; fusion reads everything.
      const std::vector<double> depth2{1, 1, 0, 0, 0,   //
                                       1, 1, 0, 0, 0,   //
                                       0, 0, 1, 1, 0,   //
                                       0, 0, 1, 1, 0,   //
                                       1, 1, 1, 1, 1};
      res.ok = matches(closure_at_depth(2), depth2);
      res.detail = "depth2";
      break;
    }
    case MaskKind::two_streams: {
      const std::vector<double> depth2{1, 1, 0, 0,   //
                                       1, 1, 0, 0,   //
                                       0, 0, 1, 1,   //
                                       0, 0, 1, 1};
      res.ok = matches(closure_at_depth(2), depth2);
      res.detail = "depth2(2,2,0)";
      break;
    }
    case MaskKind::bottleneck: {
      // One layer in, unimodal rows have only read their stream plus the
      // fusion token; after the second layer the fusion token has already
      // mixed everything, so the closure is full.
      const std::vector<double> depth1{1, 1, 0, 0, 1,   //
                                       1, 1, 0, 0, 1,   //
                                       0, 0, 1, 1, 1,   //
                                       0, 0, 1, 1, 1,   //
                                       1, 1, 1, 1, 1};
      const std::vector<double> depth2(25, 1.0);
      res.ok = matches(closure_at_depth(1), depth1) &&
               matches(closure_at_depth(2), depth2);
      res.detail = "depth1+depth2";
      break;
    }
    case MaskKind::input_level: {
      const std::vector<double> depth1(25, 1.0);
      res.ok = matches(closure_at_depth(1), depth1);
      res.detail = "depth1";
      break;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Collapse experiment.
// ---------------------------------------------------------------------------

// Hyperparameters for the shortcut demonstration. The data places the shared
// class-bearing latent under mild pixel noise and adds strong modality-private
// pair keys; the model/optimizer settings are sized so that within the step
// budget a stream-isolated model reliably aligns on the latent while models
// that may mix streams reliably latch onto the cross-modal key shortcut.
struct CollapseSettings {
  std::size_t steps = 3600;
  std::size_t batch_size = 32;
  std::size_t layers = 2;
  double noise_sigma = 0.5;
  double class_spread = 0.6;
  std::size_t latent_dim = 24;
  double pair_key_scale = 2.6;
  double tau = 0.3;
  double lr_max = 3e-3;
  std::size_t warmup_steps = 20;
  std::size_t probe_train = 768;
  std::size_t probe_eval = 512;
  std::size_t retrieval_pools = 8;
  std::uint64_t seed = 11;
  bool include_fusion_loss_run = true;
  bool include_uncoupled_run = true;

  static CollapseSettings defaults() { return {}; }
};

// What a trained variant is expected to show. Stream-isolated models must
// encode class content (probe and retrieval clearly above chance). Mixing
// models are expected to ride the cross-modal key shortcut instead, losing
// linearly-decodable class information (probe inside the chance band); their
// retrieval may be excellent, which is the point of the shortcut. A model
// trained on uncoupled pairs has no usable pairing signal at all, so the
// claim there is about pairing, not class content: retrieval at chance and
// no embedding alignment.
enum class CollapseExpect { above_chance, at_chance, uncoupled };

inline std::string to_string(CollapseExpect e) {
  switch (e) {
    case CollapseExpect::above_chance: return "above_chance";
    case CollapseExpect::at_chance: return "at_chance";
    case CollapseExpect::uncoupled: return "uncoupled";
  }
  return "?";
}

struct CollapseRow {
  std::string label;
  bool finite = true;
  std::size_t divergence_step = 0;
  double probe = 0.0;      // averaged-head linear probe accuracy
  double retrieval = 0.0;  // mean in-pool top-1 retrieval
  double alignment = 0.0;  // mean paired cosine in embedding space
  CollapseExpect expect = CollapseExpect::above_chance;
  bool pass = false;
};

struct CollapseOutcome {
  std::vector<CollapseRow> rows;
  double chance = 0.0;
  double band = 0.0;       // five binomial standard deviations
  double retrieval_threshold = 0.0;
};

inline RunConfig collapse_run_config(MaskKind kind, const CollapseSettings& s,
                                     bool fusion_terms, double rho) {
  RunConfig cfg = toy_run_config(Arch::vit, kind);
  cfg.objective = Objective::contrastive;
  cfg.include_fusion_terms = fusion_terms;
  cfg.layers = s.layers;
  cfg.noise_sigma = s.noise_sigma;
  cfg.class_spread = s.class_spread;
  cfg.latent_dim = s.latent_dim;
  cfg.pair_key_scale = s.pair_key_scale;
  cfg.tau = s.tau;
  cfg.coupling_rho = rho;
  cfg.lr_max = s.lr_max;
  cfg.warmup_steps = s.warmup_steps;
  cfg.steps = s.steps;
  cfg.batch_size = s.batch_size;
  cfg.seed = s.seed;
  cfg.log_every = 100;
  return cfg;
}

inline CollapseOutcome run_collapse_experiment(
    const CollapseSettings& s, std::ostream* progress = nullptr) {
  struct Plan {
    std::string label;
    MaskKind kind;
    bool fusion_terms;
    double rho;
    CollapseExpect expect;
  };
  std::vector<Plan> plans{
      {"zorro", MaskKind::zorro, false, 1.0, CollapseExpect::above_chance},
      {"two_streams", MaskKind::two_streams, false, 1.0,
       CollapseExpect::above_chance},
      {"input_level", MaskKind::input_level, false, 1.0,
       CollapseExpect::at_chance},
      {"bottleneck", MaskKind::bottleneck, false, 1.0,
       CollapseExpect::at_chance},
  };
  if (s.include_fusion_loss_run)
    plans.push_back({"zorro_fusion_loss", MaskKind::zorro, true, 1.0,
                     CollapseExpect::above_chance});
  if (s.include_uncoupled_run)
    plans.push_back({"zorro_uncoupled", MaskKind::zorro, false, 0.0,
                     CollapseExpect::uncoupled});

  CollapseOutcome out;
  out.chance = 1.0 / 8.0;
  out.band = 5.0 * std::sqrt(out.chance * (1.0 - out.chance) /
                             static_cast<double>(s.probe_eval));
  out.retrieval_threshold = 5.0 / static_cast<double>(s.batch_size);

  for (const Plan& plan : plans) {
    if (progress)
      *progress << "collapse: training " << plan.label << " ("
                << s.steps << " steps)\n"
                << std::flush;
    RunConfig cfg =
        collapse_run_config(plan.kind, s, plan.fusion_terms, plan.rho);
    cfg.validate();
    AnyModel model(cfg);
    materialize_training_params(cfg, model);
    TrainOptimizer opt(cfg);
    TrainResult tr = train_loop(cfg, model, opt, 0);

    CollapseRow row;
    row.label = plan.label;
    row.expect = plan.expect;
    if (tr.diverged) {
      row.finite = false;
      row.divergence_step = tr.divergence_step;
      row.pass = false;
      out.rows.push_back(row);
      continue;
    }

    // Probe on coupled data regardless of the training distribution.
    SynthSpec probe_spec = cfg.synth_spec();
    probe_spec.coupling_rho = 1.0;
    HeadFeatures ftrain =
        extract_head_features(model, probe_spec, s.probe_train, kProbeTrainKey);
    HeadFeatures feval =
        extract_head_features(model, probe_spec, s.probe_eval, kProbeEvalKey);
    Array prob_sum;
    std::size_t used = 0;
    for (std::size_t h = 0; h < ftrain.names.size(); ++h) {
      if (ftrain.names[h] != "o_v" && ftrain.names[h] != "o_a") continue;
      ProbeFit fit = fit_linear_probe(ftrain.features[h], ftrain.labels,
                                      feval.features[h], feval.labels, 8);
      if (used == 0) prob_sum = fit.eval_probs;
      else
        for (std::size_t i = 0; i < prob_sum.numel(); ++i)
          prob_sum.data[i] += fit.eval_probs.data[i];
      ++used;
    }
    for (double& v : prob_sum.data) v /= static_cast<double>(used);
    row.probe = detail::accuracy_from_probs(prob_sum, feval.labels);

    // Retrieval over several disjoint pools plus embedding alignment.
    SynthGenerator gen(probe_spec);
    double retr = 0.0;
    for (std::size_t p = 0; p < s.retrieval_pools; ++p) {
      SynthBatch pool = gen.generate(s.batch_size, kProbeEvalKey + 100 + p);
      auto [za, zv] = projected_pair_embeddings(model, cfg, pool);
      retr += metrics::retrieval_top1(za, zv);
    }
    row.retrieval = retr / static_cast<double>(s.retrieval_pools);
    {
      SynthBatch pool = gen.generate(256, kProbeEvalKey + 999);
      auto [za, zv] = projected_pair_embeddings(model, cfg, pool);
      row.alignment = metrics::alignment(za, zv);
    }

    switch (plan.expect) {
      case CollapseExpect::above_chance:
        row.pass = row.probe > out.chance + out.band &&
                   row.retrieval > out.retrieval_threshold;
        break;
      case CollapseExpect::at_chance:
        row.pass = std::abs(row.probe - out.chance) <= out.band;
        break;
      case CollapseExpect::uncoupled:
        row.pass = row.retrieval < out.retrieval_threshold &&
                   std::abs(row.alignment) < 0.05;
        break;
    }
    if (progress)
      *progress << "collapse: " << plan.label << " probe=" << row.probe
                << " retrieval=" << row.retrieval
                << " alignment=" << row.alignment
                << (row.pass ? " [ok]" : " [FAIL]") << "\n"
                << std::flush;
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// The full verification run.
// ---------------------------------------------------------------------------

struct VerifyOptions {
  std::uint64_t seed = 1;
  std::size_t isolation_trials = 20;
  bool run_collapse = true;
  CollapseSettings collapse = CollapseSettings::defaults();
  std::ostream* progress = nullptr;
};

inline VerifyReport run_verification(const VerifyOptions& opt) {
  VerifyReport rep;
  auto note = [&](const std::string& what) {
    if (opt.progress) *opt.progress << "verify: " << what << "\n" << std::flush;
  };

  // -- attention fidelity --
  note("attention fidelity");
  {
    const AttentionFidelityStats st = check_attention_fidelity(100, opt.seed);
    CheckResult c;
    c.name = "attention_row_sums";
    c.config = "-";
    c.add("max_err", st.max_row_sum_err);
    c.pass = st.max_row_sum_err <= 1e-12;
    rep.checks.push_back(c);
    CheckResult d;
    d.name = "attention_direct_formula";
    d.config = "-";
    d.add("max_diff", st.max_formula_diff);
    d.pass = st.max_formula_diff <= 1e-10;
    rep.checks.push_back(d);
  }
  {
    const double diff = check_unmasked_softmax_equivalence(100, opt.seed + 1);
    CheckResult c;
    c.name = "softmax_unmasked_equivalence";
    c.config = "-";
    c.add("max_diff", diff);
    c.pass = diff == 0.0;
    rep.checks.push_back(c);
  }

  // -- loss fidelity --
  note("loss fidelity");
  {
    const LossFidelityStats st = check_loss_fidelity(50, opt.seed + 2);
    CheckResult c;
    c.name = "nce_direct_summation";
    c.config = "-";
    c.add("max_pair_diff", st.max_pair_diff);
    c.add("max_fusion_diff", st.max_fusion_diff);
    c.pass = st.max_pair_diff <= 1e-12 && st.max_fusion_diff <= 1e-12;
    rep.checks.push_back(c);
    CheckResult d;
    d.name = "nce_analytic_values";
    d.config = "-";
    d.add("pair_err", st.analytic_pair_err);
    d.add("fusion_err", st.analytic_fusion_err);
    d.pass = st.analytic_pair_err <= 1e-12 && st.analytic_fusion_err <= 1e-12;
    rep.checks.push_back(d);
  }

  // -- value isolation --
  struct IsoPlan {
    std::string label;
    Arch arch;
    MaskKind kind;
    WeightSharing sharing;
  };
  const std::vector<IsoPlan> isolating{
      {"vit/zorro", Arch::vit, MaskKind::zorro, WeightSharing::shared},
      {"vit/zorro/per_stream", Arch::vit, MaskKind::zorro,
       WeightSharing::per_stream},
      {"vit/two_streams", Arch::vit, MaskKind::two_streams,
       WeightSharing::shared},
      {"swin/zorro", Arch::swin, MaskKind::zorro, WeightSharing::shared},
      {"hip/zorro", Arch::hip, MaskKind::zorro, WeightSharing::shared},
  };
  for (const IsoPlan& p : isolating) {
    note("isolation " + p.label);
    AnyModel model(toy_run_config(p.arch, p.kind, p.sharing));
    const IsolationStats st =
        check_isolation(model, opt.isolation_trials, opt.seed + 3);
    CheckResult c;
    c.name = "isolation_values";
    c.config = p.label;
    c.add("max_dv", st.max_dv);
    c.add("max_da", st.max_da);
    c.add("trials", static_cast<double>(opt.isolation_trials));
    c.pass = st.max_dv <= 1e-12 && st.max_da <= 1e-12;
    rep.checks.push_back(c);
  }
  for (MaskKind kind : {MaskKind::input_level, MaskKind::bottleneck}) {
    const std::string label =
        std::string("vit/") +
        (kind == MaskKind::input_level ? "input_level" : "bottleneck");
    note("expected leak " + label);
    AnyModel model(toy_run_config(Arch::vit, kind));
    const IsolationStats st = check_isolation(model, 5, opt.seed + 3);
    CheckResult c;
    c.name = "isolation_leak_expected";
    c.config = label;
    c.add("max_dv", st.max_dv);
    c.add("max_da", st.max_da);
    c.pass = st.max_dv > 0.0 && st.max_da > 0.0;
    rep.checks.push_back(c);
  }

  // -- gradient isolation --
  for (const IsoPlan& p :
       {IsoPlan{"vit/zorro", Arch::vit, MaskKind::zorro, WeightSharing::shared},
        IsoPlan{"swin/zorro", Arch::swin, MaskKind::zorro,
                WeightSharing::shared},
        IsoPlan{"hip/zorro", Arch::hip, MaskKind::zorro,
                WeightSharing::shared}}) {
    note("gradient isolation " + p.label);
    AnyModel model(toy_run_config(p.arch, p.kind, p.sharing));
    const GradIsolationStats st = check_gradient_isolation(model, opt.seed + 4);
    CheckResult c;
    c.name = "gradient_isolation";
    c.config = p.label;
    c.add("video_grad", st.video_grad);
    c.add("audio_grad", st.audio_grad);
    c.pass = st.video_grad == 0.0 && st.audio_grad == 0.0;
    rep.checks.push_back(c);
  }
  {
    note("gradient leak input_level");
    AnyModel model(toy_run_config(Arch::vit, MaskKind::input_level));
    const GradIsolationStats st = check_gradient_isolation(model, opt.seed + 4);
    CheckResult c;
    c.name = "gradient_leak_expected";
    c.config = "vit/input_level";
    c.add("video_grad", st.video_grad);
    c.add("audio_grad", st.audio_grad);
    c.pass = st.video_grad > 0.0 && st.audio_grad > 0.0;
    rep.checks.push_back(c);
  }
  for (MaskKind kind : {MaskKind::zorro, MaskKind::input_level}) {
    const std::string label =
        std::string("vit/") + (kind == MaskKind::zorro ? "zorro" : "input_level");
    note("gradient fd crosscheck " + label);
    AnyModel model(toy_run_config(Arch::vit, kind));
    const double err = fd_crosscheck_video_grad(model, opt.seed + 5);
    CheckResult c;
    c.name = "gradient_fd_crosscheck";
    c.config = label;
    c.add("max_rel_err", err);
    c.pass = err <= 1e-4;
    rep.checks.push_back(c);
  }

  // -- the mask-bug kill switch: a corrupted mask must be caught --
  {
    note("mask mutation kill switch");
    AnyModel model(toy_run_config(Arch::vit, MaskKind::zorro));
    std::vector<AttentionMask>* masks = model.self_masks();
    const StreamLayout l{8, 4, 2};
    (*masks)[0].m(l.video_begin(), l.audio_begin()) = 1.0;  // inject the bug
    const IsolationStats st = check_isolation(model, 5, opt.seed + 6);
    CheckResult c;
    c.name = "mask_mutation_detected";
    c.config = "vit/zorro";
    c.add("max_dv_after_bug", st.max_dv);
    c.pass = st.max_dv > 0.0;
    rep.checks.push_back(c);
  }

  // -- equivalences --
  struct EqPlan {
    std::string label;
    Arch arch;
    WeightSharing sharing;
  };
  for (const EqPlan& p :
       {EqPlan{"vit/shared", Arch::vit, WeightSharing::shared},
        EqPlan{"vit/per_stream", Arch::vit, WeightSharing::per_stream},
        EqPlan{"swin", Arch::swin, WeightSharing::shared},
        EqPlan{"hip", Arch::hip, WeightSharing::shared}}) {
    note("two-streams equivalence " + p.label);
    const auto [dv, da] =
        check_two_streams_equivalence(p.arch, p.sharing, opt.seed + 7);
    CheckResult c;
    c.name = "equivalence_two_streams";
    c.config = p.label;
    c.add("max_dv", dv);
    c.add("max_da", da);
    c.pass = dv <= 1e-12 && da <= 1e-12;
    rep.checks.push_back(c);
  }
  {
    note("unmasked replica equivalence");
    const double diff = check_unmasked_trunk_equivalence(opt.seed + 8);
    CheckResult c;
    c.name = "equivalence_unmasked_replica";
    c.config = "vit/input_level";
    c.add("max_diff", diff);
    c.pass = diff <= 1e-12;
    rep.checks.push_back(c);
  }
  {
    note("fusion readout invariance");
    const FusionInvarianceStats st = check_fusion_readout_invariance(opt.seed + 9);
    CheckResult c;
    c.name = "decoder_fusion_invariance";
    c.config = "vit/zorro";
    c.add("d_of", st.d_of);
    c.add("d_ov", st.d_ov);
    c.add("d_og", st.d_og);
    c.pass = st.d_of == 0.0 && st.d_ov > 0.0 && st.d_og > 0.0;
    rep.checks.push_back(c);
  }

  // -- reachability --
  note("reachability");
  for (MaskKind kind : {MaskKind::zorro, MaskKind::two_streams,
                        MaskKind::bottleneck, MaskKind::input_level}) {
    const ReachabilityGoldenResult r = check_reachability_golden(kind);
    CheckResult c;
    c.name = "reachability_golden";
    c.config = to_string(kind);
    c.add("depths", r.detail);
    c.pass = r.ok;
    rep.checks.push_back(c);
  }
  {
    CheckResult c;
    c.name = "reachability_path_oracle";
    c.config = "-";
    c.add("trials", 10.0);
    c.pass = check_reachability_bfs_oracle(10, opt.seed + 10);
    rep.checks.push_back(c);
  }

  // -- fusion_start_layer sweep: isolation must hold at every setting --
  for (Arch arch : {Arch::vit, Arch::swin, Arch::hip}) {
    const std::size_t n_layers = arch == Arch::hip ? 3 : 4;
    for (std::size_t fsl = 0; fsl < n_layers; ++fsl) {
      RunConfig cfg = toy_run_config(arch, MaskKind::zorro);
      cfg.mask.fusion_start_layer = fsl;
      note("fsl sweep " + to_string(arch) + " fsl=" + std::to_string(fsl));
      AnyModel model(cfg);
      const IsolationStats st = check_isolation(model, 5, opt.seed + 11);
      CheckResult c;
      c.name = "fsl_sweep_isolation";
      c.config = to_string(arch) + "/fsl" + std::to_string(fsl);
      c.add("max_dv", st.max_dv);
      c.add("max_da", st.max_da);
      c.pass = st.max_dv <= 1e-12 && st.max_da <= 1e-12;
      rep.checks.push_back(c);
    }
  }

  // -- model-loss gradients against finite differences --
  struct FdPlan {
    std::string label;
    Arch arch;
    MaskKind kind;
    Objective objective;
  };
  for (const FdPlan& p :
       {FdPlan{"vit/contrastive", Arch::vit, MaskKind::zorro,
               Objective::contrastive},
        FdPlan{"swin/contrastive", Arch::swin, MaskKind::zorro,
               Objective::contrastive},
        FdPlan{"hip/contrastive", Arch::hip, MaskKind::zorro,
               Objective::contrastive},
        FdPlan{"vit/supervised", Arch::vit, MaskKind::zorro,
               Objective::supervised}}) {
    note("model-loss fd " + p.label);
    RunConfig cfg = toy_run_config(p.arch, p.kind);
    cfg.objective = p.objective;
    cfg.batch_size = 4;
    cfg.steps = 1;
    const double err = check_model_loss_fd(cfg, 20, opt.seed + 12);
    CheckResult c;
    c.name = "model_loss_fd";
    c.config = p.label;
    c.add("max_rel_err", err);
    c.add("coords", 20.0);
    c.pass = err <= 1e-4;
    rep.checks.push_back(c);
  }

  // -- collapse --
  if (opt.run_collapse) {
    note("collapse experiment");
    const CollapseOutcome co = run_collapse_experiment(opt.collapse,
                                                       opt.progress);
    for (const CollapseRow& row : co.rows) {
      CheckResult c;
      c.name = "collapse";
      c.config = row.label;
      if (!row.finite) {
        c.add("diverged_at_step", static_cast<double>(row.divergence_step));
        c.pass = false;
      } else {
        c.add("probe", row.probe);
        c.add("retrieval", row.retrieval);
        c.add("alignment", row.alignment);
        c.add("chance", co.chance);
        c.add("band", co.band);
        c.add("retrieval_threshold", co.retrieval_threshold);
        c.add("expected", to_string(row.expect));
        c.pass = row.pass;
      }
      rep.checks.push_back(c);
    }
  }

  return rep;
}

}  // namespace zorro
