#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "zorro/masking.hpp"
#include "zorro/model_common.hpp"
#include "zorro/vit.hpp"

namespace zorro {

// Token permutation for windowed attention over a k-d grid: partition
// position p maps to the original flat index perm[p]. Windows enumerate
// row-major over window cells, cells row-major inside a window. `shift`
// implements the cyclic shift (roll) used on alternating layers; an axis
// whose window spans the whole grid never shifts, so a full-grid window is
// always the identity permutation.
inline std::vector<std::size_t> window_permutation(
    const std::vector<std::size_t>& grid, const std::vector<std::size_t>& win,
    const std::vector<std::size_t>& shift) {
  require(grid.size() == win.size() && grid.size() == shift.size(),
          "window_permutation: rank mismatch");
  const std::size_t rank = grid.size();
  std::size_t total = 1;
  for (std::size_t a = 0; a < rank; ++a) {
    require(win[a] > 0 && grid[a] % win[a] == 0, "window axis ", a, ": grid ",
            grid[a], " not divisible by window ", win[a]);
    total *= grid[a];
  }
  std::vector<std::size_t> perm(total);
  std::vector<std::size_t> coord(rank, 0);  // position in shifted space
  for (std::size_t p = 0; p < total; ++p) {
    // Decompose p: windows row-major, then offsets row-major.
    std::size_t rem = p, cells = 1, offs = 1;
    for (std::size_t a = 0; a < rank; ++a) cells *= grid[a] / win[a];
    for (std::size_t a = 0; a < rank; ++a) offs *= win[a];
    std::size_t wcell = rem / offs, off = rem % offs;
    for (std::size_t a = rank; a-- > 0;) {
      const std::size_t nc = grid[a] / win[a];
      coord[a] = (wcell % nc) * win[a] + off % win[a];
      wcell /= nc;
      off /= win[a];
    }
    (void)cells;
    std::size_t orig = 0;
    for (std::size_t a = 0; a < rank; ++a)
      orig = orig * grid[a] + (coord[a] + shift[a]) % grid[a];
    perm[p] = orig;
  }
  return perm;
}

inline std::vector<std::size_t> inverse_permutation(
    const std::vector<std::size_t>& perm) {
  std::vector<std::size_t> inv(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

struct SwinWindow3d {
  std::size_t t = 1, h = 4, w = 4;
};
struct SwinWindow2d {
  std::size_t t = 2, s = 2;
};

struct ZorroSwinConfig {
  std::size_t d_model = 32;
  std::size_t layers = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  VideoDims video{};
  VideoPatch video_patch{};
  AudioDims audio{};
  AudioPatch audio_patch{};
  SwinWindow3d video_window{};
  SwinWindow2d audio_window{};
  std::size_t n_fusion = 2;
  MaskConfig mask{};

  std::vector<std::size_t> video_grid() const {
    return {video.frames / video_patch.t, video.height / video_patch.h,
            video.width / video_patch.w};
  }
  std::vector<std::size_t> audio_grid() const {
    return {audio.time / audio_patch.t, audio.bins / audio_patch.s};
  }

  void validate() const {
    require(d_model > 0 && layers > 0 && heads > 0, "model sizes must be positive");
    require(d_model % heads == 0, "d_model ", d_model, " not divisible by ",
            heads, " heads");
    require(mask.kind == MaskKind::zorro || mask.kind == MaskKind::two_streams,
            "windowed attention supports only the zorro and two_streams mask "
            "kinds, got ", to_string(mask.kind));
    require(mask.fusion_start_layer < layers, "fusion_start_layer ",
            mask.fusion_start_layer, " must be < layers ", layers);
    (void)video_patch_indices(video, video_patch);
    (void)audio_patch_indices(audio, audio_patch);
    const auto vg = video_grid();
    require(vg[0] % video_window.t == 0 && vg[1] % video_window.h == 0 &&
                vg[2] % video_window.w == 0,
            "video token grid ", vg[0], "x", vg[1], "x", vg[2],
            " not divisible by window ", video_window.t, "x", video_window.h,
            "x", video_window.w);
    const auto ag = audio_grid();
    require(ag[0] % audio_window.t == 0 && ag[1] % audio_window.s == 0,
            "audio token grid ", ag[0], "x", ag[1], " not divisible by window ",
            audio_window.t, "x", audio_window.s);
    if (mask.kind == MaskKind::zorro)
      require(n_fusion > 0, "zorro masking uses fusion outputs and needs n_fusion > 0");
  }
};

// Stream-aware windowed transformer. Unimodal tokens attend inside local
// windows of their own stream's grid (cyclically shifted on odd layers);
// fusion tokens use dense masked attention over the whole sequence, exactly
// as in the dense backbone. Parameters are per-stream and share names with
// the dense per-stream model, so a full-grid window reproduces it bit for
// bit.
class ZorroSwin {
 public:
  ZorroSwin(ZorroSwinConfig config, std::uint64_t seed)
      : cfg_(config), seed_(seed) {
    cfg_.validate();
    video_idx_ = video_patch_indices(cfg_.video, cfg_.video_patch);
    audio_idx_ = audio_patch_indices(cfg_.audio, cfg_.audio_patch);
    for (std::size_t l = 0; l < cfg_.layers; ++l)
      self_masks_.push_back(build_self_mask(layout(), cfg_.mask, l));
    decoder_mask_ = build_decoder_mask(layout(), cfg_.mask);

    const auto vg = cfg_.video_grid();
    const std::vector<std::size_t> vw{cfg_.video_window.t, cfg_.video_window.h,
                                      cfg_.video_window.w};
    const auto ag = cfg_.audio_grid();
    const std::vector<std::size_t> aw{cfg_.audio_window.t, cfg_.audio_window.s};
    auto half = [](const std::vector<std::size_t>& g,
                   const std::vector<std::size_t>& w) {
      std::vector<std::size_t> s(g.size(), 0);
      for (std::size_t a = 0; a < g.size(); ++a)
        s[a] = w[a] < g[a] ? w[a] / 2 : 0;
      return s;
    };
    video_perm_[0] = window_permutation(vg, vw, std::vector<std::size_t>(3, 0));
    video_perm_[1] = window_permutation(vg, vw, half(vg, vw));
    audio_perm_[0] = window_permutation(ag, aw, std::vector<std::size_t>(2, 0));
    audio_perm_[1] = window_permutation(ag, aw, half(ag, aw));
    video_window_len_ = vw[0] * vw[1] * vw[2];
    audio_window_len_ = aw[0] * aw[1];
    materialize_params();
  }

  const ZorroSwinConfig& config() const { return cfg_; }
  StreamLayout layout() const {
    return StreamLayout{video_token_count(cfg_.video, cfg_.video_patch),
                        audio_token_count(cfg_.audio, cfg_.audio_patch),
                        cfg_.mask.kind == MaskKind::two_streams ? 0
                                                                : cfg_.n_fusion};
  }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::vector<AttentionMask>& self_masks() { return self_masks_; }
  AttentionMask& decoder_mask() { return decoder_mask_; }

  Ctx make_ctx(Tape& tape, bool trainable = true) {
    return Ctx{tape, params_, seed_, trainable};
  }

  ZorroVars forward(Ctx& c, Var video, Var audio) const {
    const StreamLayout l = layout();
    require(c.tape.val(video).shape ==
                (std::vector<std::size_t>{cfg_.video.frames, cfg_.video.height,
                                          cfg_.video.width, cfg_.video.channels}),
            "video input has shape ", shape_str(c.tape.val(video)));
    require(c.tape.val(audio).shape ==
                (std::vector<std::size_t>{cfg_.audio.time, cfg_.audio.bins}),
            "audio input has shape ", shape_str(c.tape.val(audio)));
    std::vector<Var> rows{
        embed_patches(c, video, video_idx_, l.n_video,
                      cfg_.video_patch.t * cfg_.video_patch.h *
                          cfg_.video_patch.w * cfg_.video.channels,
                      cfg_.d_model, "embed.video"),
        embed_patches(c, audio, audio_idx_, l.n_audio,
                      cfg_.audio_patch.t * cfg_.audio_patch.s, cfg_.d_model,
                      "embed.audio")};
    if (l.n_fusion > 0)
      rows.push_back(c.P("fusion.tokens", {l.n_fusion, cfg_.d_model}));
    Var x = concat_rows(rows);
    for (std::size_t i = 0; i < cfg_.layers; ++i)
      x = block(c, x, i, "trunk.layer" + std::to_string(i));
    return decode_outputs(c, x, decoder_mask_, cfg_.heads, "decoder");
  }

  ZorroOutputs forward_eval(const Array& video, const Array& audio) {
    Tape t;
    Ctx c = make_ctx(t, false);
    ZorroVars z = forward(c, t.constant(video), t.constant(audio));
    ZorroOutputs out;
    out.o_v = t.val(z.o_v);
    out.o_a = t.val(z.o_a);
    if (z.has_fusion_outputs) {
      out.o_f = t.val(z.o_f);
      out.o_g = t.val(z.o_g);
    }
    return out;
  }

 private:
  // Windowed self-attention for one stream's contiguous rows sitting at
  // [begin, end) of the permuted-q/k/v matrices.
  static Var windowed_rows(Var q, Var k, Var v, std::size_t begin, std::size_t end,
                           const std::vector<std::size_t>& perm,
                           std::size_t window_len, std::size_t heads) {
    Var qs = slice_rows(q, begin, end), ks = slice_rows(k, begin, end),
        vs = slice_rows(v, begin, end);
    const std::size_t n = end - begin;
    const bool identity = [&] {
      for (std::size_t i = 0; i < perm.size(); ++i)
        if (perm[i] != i) return false;
      return true;
    }();
    if (!identity) {
      qs = take_rows(qs, perm);
      ks = take_rows(ks, perm);
      vs = take_rows(vs, perm);
    }
    const Array ones = Array::full({window_len, window_len}, 1.0);
    std::vector<Var> outs;
    for (std::size_t w0 = 0; w0 < n; w0 += window_len)
      outs.push_back(attention_core(slice_rows(qs, w0, w0 + window_len),
                                    slice_rows(ks, w0, w0 + window_len),
                                    slice_rows(vs, w0, w0 + window_len), ones,
                                    heads));
    Var joined = outs.size() == 1 ? outs[0] : concat_rows(outs);
    return identity ? joined : take_rows(joined, inverse_permutation(perm));
  }

  Var block(Ctx& c, Var x, std::size_t layer, const std::string& prefix) const {
    const StreamLayout l = layout();
    const std::size_t dm = cfg_.d_model;
    const std::size_t hidden = static_cast<std::size_t>(dm * cfg_.mlp_ratio);
    Var n1 = per_stream_apply(x, l, [&](Var rows, const std::string& s) {
      return layer_norm_p(c, rows, prefix + "." + s + ".ln1");
    });
    auto project = [&](const char* which) {
      return per_stream_apply(n1, l, [&](Var rows, const std::string& s) {
        return linear(c, rows, dm, prefix + "." + s + ".attn." + which);
      });
    };
    Var q = project("q"), k = project("k"), v = project("v");
    const auto& vperm = video_perm_[layer % 2];
    const auto& aperm = audio_perm_[layer % 2];
    std::vector<Var> core{windowed_rows(q, k, v, l.video_begin(), l.video_end(),
                                        vperm, video_window_len_, cfg_.heads),
                          windowed_rows(q, k, v, l.audio_begin(), l.audio_end(),
                                        aperm, audio_window_len_, cfg_.heads)};
    if (l.n_fusion > 0) {
      Array fusion_mask = Array::zeros({l.n_fusion, l.total()});
      for (std::size_t i = 0; i < l.n_fusion; ++i)
        for (std::size_t j = 0; j < l.total(); ++j)
          fusion_mask(i, j) = self_masks_[layer].m(l.fusion_begin() + i, j);
      core.push_back(attention_core(slice_rows(q, l.fusion_begin(), l.fusion_end()),
                                    k, v, fusion_mask, cfg_.heads));
    }
    Var core_all = concat_rows(core);
    Var attn_out = per_stream_apply(core_all, l, [&](Var rows, const std::string& s) {
      return linear(c, rows, dm, prefix + "." + s + ".attn.o");
    });
    x = x + attn_out;
    Var ff = per_stream_apply(x, l, [&](Var rows, const std::string& s) {
      return mlp(c, layer_norm_p(c, rows, prefix + "." + s + ".ln2"), hidden,
                 prefix + "." + s + ".mlp");
    });
    return x + ff;
  }

  void materialize_params() {
    Tape t;
    Ctx c = make_ctx(t, false);
    (void)forward(c,
                  t.constant(Array::zeros({cfg_.video.frames, cfg_.video.height,
                                           cfg_.video.width, cfg_.video.channels})),
                  t.constant(Array::zeros({cfg_.audio.time, cfg_.audio.bins})));
  }

  ZorroSwinConfig cfg_;
  std::uint64_t seed_;
  ParamStore params_;
  std::shared_ptr<const std::vector<std::size_t>> video_idx_, audio_idx_;
  std::vector<AttentionMask> self_masks_;
  AttentionMask decoder_mask_{};
  std::vector<std::size_t> video_perm_[2], audio_perm_[2];
  std::size_t video_window_len_ = 0, audio_window_len_ = 0;
};

}  // namespace zorro
