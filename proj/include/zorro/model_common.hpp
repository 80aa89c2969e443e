#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "zorro/masking.hpp"
#include "zorro/params.hpp"
#include "zorro/tape.hpp"

namespace zorro {

enum class WeightSharing { shared, per_stream };

inline std::string to_string(WeightSharing s) {
  return s == WeightSharing::shared ? "shared" : "per_stream";
}

enum class InitKind { normal, zeros, ones };

// Binds one tape to one parameter store for the duration of a forward pass.
// Parameters are materialized on first use (keyed init, so values depend only
// on the seed and the parameter name) and each becomes exactly one leaf per
// tape, shared by every sample in the batch.
struct Ctx {
  Tape& tape;
  ParamStore& params;
  std::uint64_t seed = 0;
  bool trainable = true;
  double init_scale = 0.02;

  Ctx(Tape& t, ParamStore& p, std::uint64_t s, bool train = true)
      : tape(t), params(p), seed(s), trainable(train) {}

  Var P(const std::string& name, std::vector<std::size_t> shape,
        InitKind kind = InitKind::normal) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Array& stored = params.ensure(name, shape, [&]() {
      switch (kind) {
        case InitKind::zeros: return init::zeros(shape);
        case InitKind::ones: return init::ones(shape);
        default: return init::normal(seed, name, shape, init_scale);
      }
    });
    Var v = tape.leaf(stored, trainable);
    cache_.emplace(name, v);
    return v;
  }

  // Gradients of every parameter touched by this context, by name. Valid
  // after backward; untouched parameters report zeros.
  std::map<std::string, Array> grads() const {
    std::map<std::string, Array> out;
    for (const auto& [name, var] : cache_) out[name] = tape.grad(var);
    return out;
  }

  const std::map<std::string, Var>& touched() const { return cache_; }

 private:
  std::map<std::string, Var> cache_;
};

// ---- building blocks ----

inline Var linear(Ctx& c, Var x, std::size_t d_out, const std::string& prefix) {
  const std::size_t d_in = c.tape.val(x).cols();
  Var w = c.P(prefix + ".w", {d_in, d_out});
  Var b = c.P(prefix + ".b", {d_out}, InitKind::zeros);
  return add_rowvec(matmul(x, w), b);
}

inline Var layer_norm_p(Ctx& c, Var x, const std::string& prefix) {
  const std::size_t d = c.tape.val(x).cols();
  Var g = c.P(prefix + ".g", {d}, InitKind::ones);
  Var b = c.P(prefix + ".b", {d}, InitKind::zeros);
  return layer_norm(x, g, b);
}

inline Var mlp(Ctx& c, Var x, std::size_t hidden, const std::string& prefix) {
  return linear(c, gelu(linear(c, x, hidden, prefix + ".fc1")),
                c.tape.val(x).cols(), prefix + ".fc2");
}

// Scaled dot-product attention over pre-built q/k/v, masked routing, heads
// along the feature axis. No projections here; callers own those.
inline Var attention_core(Var q, Var k, Var v, const Array& mask,
                          std::size_t heads) {
  Tape& t = *q.tape;
  const std::size_t dm = t.val(q).cols();
  require(t.val(k).cols() == dm && t.val(v).cols() == dm,
          "attention: q/k/v widths disagree: ", shape_str(t.val(q)), " ",
          shape_str(t.val(k)), " ", shape_str(t.val(v)));
  require(heads > 0 && dm % heads == 0, "attention: width ", dm,
          " not divisible by ", heads, " heads");
  require(mask.ndim() == 2 && mask.rows() == t.val(q).rows() &&
              mask.cols() == t.val(k).rows(),
          "attention: mask ", Array::shape_str(mask.shape), " does not match ",
          t.val(q).rows(), " queries x ", t.val(k).rows(), " keys");
  const std::size_t dh = dm / heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, (h + 1) * dh);
    Var kh = slice_cols(k, h * dh, (h + 1) * dh);
    Var vh = slice_cols(v, h * dh, (h + 1) * dh);
    Var logits = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
    outs.push_back(matmul(softmax_masked(logits, mask), vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

// Full multi-head attention with its own projections: q from q_in, k/v from
// kv_in, output projection back to q_in's width.
inline Var multihead_attention(Ctx& c, Var q_in, Var kv_in, const Array& mask,
                               std::size_t heads, const std::string& prefix) {
  const std::size_t dm = c.tape.val(q_in).cols();
  Var q = linear(c, q_in, dm, prefix + ".q");
  Var k = linear(c, kv_in, dm, prefix + ".k");
  Var v = linear(c, kv_in, dm, prefix + ".v");
  return linear(c, attention_core(q, k, v, mask, heads), dm, prefix + ".o");
}

// Applies fn to each non-empty stream's row range with a stream-specific
// name suffix, then reassembles the sequence. This is how per-stream weights
// work: routing stays global (one mask), parameters split by stream.
template <typename Fn>
Var per_stream_apply(Var x, const StreamLayout& layout, Fn&& fn) {
  std::vector<Var> parts;
  if (layout.n_video > 0)
    parts.push_back(fn(slice_rows(x, layout.video_begin(), layout.video_end()),
                       std::string("video")));
  if (layout.n_audio > 0)
    parts.push_back(fn(slice_rows(x, layout.audio_begin(), layout.audio_end()),
                       std::string("audio")));
  if (layout.n_fusion > 0)
    parts.push_back(fn(slice_rows(x, layout.fusion_begin(), layout.fusion_end()),
                       std::string("fusion")));
  require(!parts.empty(), "per_stream_apply: layout has no tokens");
  return parts.size() == 1 ? parts[0] : concat_rows(parts);
}

// Pre-norm transformer block: x += attn(LN(x)); x += mlp(LN(x)).
// With per_stream sharing each stream gets its own projections, layer norms
// and MLP; attention still routes across streams according to the mask.
inline Var transformer_block(Ctx& c, Var x, const Array& mask, std::size_t heads,
                             double mlp_ratio, const std::string& prefix,
                             const StreamLayout* per_stream = nullptr) {
  const std::size_t dm = c.tape.val(x).cols();
  const std::size_t hidden = static_cast<std::size_t>(dm * mlp_ratio);
  if (per_stream == nullptr) {
    Var n1 = layer_norm_p(c, x, prefix + ".ln1");
    x = x + multihead_attention(c, n1, n1, mask, heads, prefix + ".attn");
    x = x + mlp(c, layer_norm_p(c, x, prefix + ".ln2"), hidden, prefix + ".mlp");
    return x;
  }
  const StreamLayout& l = *per_stream;
  Var n1 = per_stream_apply(x, l, [&](Var rows, const std::string& s) {
    return layer_norm_p(c, rows, prefix + "." + s + ".ln1");
  });
  auto project = [&](const char* which) {
    return per_stream_apply(n1, l, [&](Var rows, const std::string& s) {
      return linear(c, rows, dm, prefix + "." + s + ".attn." + which);
    });
  };
  Var core = attention_core(project("q"), project("k"), project("v"), mask, heads);
  Var attn_out = per_stream_apply(core, l, [&](Var rows, const std::string& s) {
    return linear(c, rows, dm, prefix + "." + s + ".attn.o");
  });
  x = x + attn_out;
  Var ff = per_stream_apply(x, l, [&](Var rows, const std::string& s) {
    return mlp(c, layer_norm_p(c, rows, prefix + "." + s + ".ln2"), hidden,
               prefix + "." + s + ".mlp");
  });
  return x + ff;
}

// ---- patch embedding ----

struct VideoDims {
  std::size_t frames = 2, height = 8, width = 8, channels = 1;
};
struct AudioDims {
  std::size_t time = 8, bins = 8;
};
struct VideoPatch {
  std::size_t t = 1, h = 4, w = 4;
};
struct AudioPatch {
  std::size_t t = 4, s = 4;
};

// Token r holds patch cell (t, h, w) of the grid in row-major order; within a
// patch, elements run row-major over (dt, dh, dw, c). The map is a fixed
// permutation of the flat input, applied with gather.
inline std::shared_ptr<const std::vector<std::size_t>> video_patch_indices(
    const VideoDims& d, const VideoPatch& p) {
  require(p.t > 0 && p.h > 0 && p.w > 0, "video patch sizes must be positive");
  require(d.frames % p.t == 0 && d.height % p.h == 0 && d.width % p.w == 0,
          "video ", d.frames, "x", d.height, "x", d.width,
          " not divisible by patch ", p.t, "x", p.h, "x", p.w);
  const std::size_t gt = d.frames / p.t, gh = d.height / p.h, gw = d.width / p.w;
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(d.frames * d.height * d.width * d.channels);
  for (std::size_t ct = 0; ct < gt; ++ct)
    for (std::size_t ch = 0; ch < gh; ++ch)
      for (std::size_t cw = 0; cw < gw; ++cw)
        for (std::size_t dt = 0; dt < p.t; ++dt)
          for (std::size_t dh = 0; dh < p.h; ++dh)
            for (std::size_t dw = 0; dw < p.w; ++dw)
              for (std::size_t cc = 0; cc < d.channels; ++cc)
                idx->push_back(((ct * p.t + dt) * d.height + (ch * p.h + dh)) *
                                   d.width * d.channels +
                               (cw * p.w + dw) * d.channels + cc);
  return idx;
}

inline std::shared_ptr<const std::vector<std::size_t>> audio_patch_indices(
    const AudioDims& d, const AudioPatch& p) {
  require(p.t > 0 && p.s > 0, "audio patch sizes must be positive");
  require(d.time % p.t == 0 && d.bins % p.s == 0, "audio ", d.time, "x", d.bins,
          " not divisible by patch ", p.t, "x", p.s);
  const std::size_t gt = d.time / p.t, gs = d.bins / p.s;
  auto idx = std::make_shared<std::vector<std::size_t>>();
  idx->reserve(d.time * d.bins);
  for (std::size_t ct = 0; ct < gt; ++ct)
    for (std::size_t cs = 0; cs < gs; ++cs)
      for (std::size_t dt = 0; dt < p.t; ++dt)
        for (std::size_t ds = 0; ds < p.s; ++ds)
          idx->push_back((ct * p.t + dt) * d.bins + cs * p.s + ds);
  return idx;
}

inline std::size_t video_token_count(const VideoDims& d, const VideoPatch& p) {
  return (d.frames / p.t) * (d.height / p.h) * (d.width / p.w);
}
inline std::size_t audio_token_count(const AudioDims& d, const AudioPatch& p) {
  return (d.time / p.t) * (d.bins / p.s);
}

// patches -> linear projection -> learned absolute position embedding
inline Var embed_patches(Ctx& c, Var input,
                         std::shared_ptr<const std::vector<std::size_t>> idx,
                         std::size_t n_tokens, std::size_t patch_elems,
                         std::size_t d_model, const std::string& prefix) {
  Var patches = gather(input, std::move(idx), {n_tokens, patch_elems});
  Var tok = linear(c, patches, d_model, prefix + ".proj");
  Var pos = c.P(prefix + ".pos", {n_tokens, d_model});
  return add(tok, pos);
}

// ---- decoder ----

// One named output per decoder query row; absent rows (two_streams) keep an
// invalid Var.
struct ZorroVars {
  Var o_v, o_a, o_f, o_g;
  bool has_fusion_outputs = false;

  std::vector<std::pair<std::string, Var>> named() const {
    std::vector<std::pair<std::string, Var>> out{{"o_v", o_v}, {"o_a", o_a}};
    if (has_fusion_outputs) {
      out.emplace_back("o_f", o_f);
      out.emplace_back("o_g", o_g);
    }
    return out;
  }
};

struct ZorroOutputs {
  Array o_v, o_a;
  std::optional<Array> o_f, o_g;
};

// Masked cross-attention readout: learned queries attend the final token
// states; the mask restricts o_v to video columns, o_a to audio columns, o_F
// to fusion columns and o_G to everything, which is what keeps the decoded
// outputs as separable as the trunk streams. The mask is passed in live so a
// caller holding a mutable copy sees its edits take effect.
inline ZorroVars decode_outputs(Ctx& c, Var tokens, const AttentionMask& dmask,
                                std::size_t heads, const std::string& prefix) {
  const std::size_t dm = c.tape.val(tokens).cols();
  require(dmask.rows() == 2 || dmask.rows() == 4, "decoder mask must have 2 or 4 rows, got ",
          dmask.rows());
  require(dmask.cols() == c.tape.val(tokens).rows(), "decoder mask has ",
          dmask.cols(), " columns but there are ", c.tape.val(tokens).rows(),
          " tokens");
  const std::size_t rows = dmask.rows();
  Var x = layer_norm_p(c, tokens, prefix + ".ln");
  std::vector<Var> queries{c.P(prefix + ".query.o_v", {1, dm}),
                           c.P(prefix + ".query.o_a", {1, dm})};
  if (rows == 4) {
    queries.push_back(c.P(prefix + ".query.o_f", {1, dm}));
    queries.push_back(c.P(prefix + ".query.o_g", {1, dm}));
  }
  Var q = linear(c, concat_rows(queries), dm, prefix + ".q");
  Var k = linear(c, x, dm, prefix + ".k");
  Var v = linear(c, x, dm, prefix + ".v");
  Var out = linear(c, attention_core(q, k, v, dmask.m, heads), dm, prefix + ".o");
  ZorroVars z;
  z.o_v = slice_rows(out, kRowOv, kRowOv + 1);
  z.o_a = slice_rows(out, kRowOa, kRowOa + 1);
  if (rows == 4) {
    z.o_f = slice_rows(out, kRowOf, kRowOf + 1);
    z.o_g = slice_rows(out, kRowOg, kRowOg + 1);
    z.has_fusion_outputs = true;
  }
  return z;
}

// Per-output linear classifier heads; logits in decoder-row order.
inline std::vector<std::pair<std::string, Var>> classifier_logits(
    Ctx& c, const ZorroVars& z, std::size_t n_classes, const std::string& prefix) {
  std::vector<std::pair<std::string, Var>> out;
  for (const auto& [name, var] : z.named())
    out.emplace_back(name, linear(c, var, n_classes, prefix + "." + name));
  return out;
}

}  // namespace zorro
