#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "zorro/masking.hpp"
#include "zorro/model_common.hpp"
#include "zorro/vit.hpp"

namespace zorro {

// One grouped cross-attention reduction. The token sequence splits into
// n_groups contiguous groups; a learned set of latent queries (layer-normed
// on the query side only) reads each group and emits n_latents rows per
// group. Keys and values are taken from the raw tokens — no normalization on
// that side — so a one-to-one attention pattern can pass token values through
// arithmetically untouched. `cross_mask` (n_latents x group_size) restricts
// which group positions each latent may read; null means all of them.
inline Var hip_block(Ctx& c, Var tokens, std::size_t n_groups, Var latents,
                     std::size_t heads, double mlp_ratio,
                     const std::string& prefix,
                     const Array* cross_mask = nullptr) {
  Tape& t = c.tape;
  const std::size_t n = t.val(tokens).rows();
  const std::size_t dm = t.val(tokens).cols();
  require(n_groups > 0 && n % n_groups == 0, "hip_block: ", n,
          " tokens not divisible into ", n_groups, " groups");
  require(t.val(latents).cols() == dm, "hip_block: latent width ",
          t.val(latents).cols(), " != token width ", dm);
  const std::size_t group = n / n_groups;
  const std::size_t n_lat = t.val(latents).rows();
  Array mask = cross_mask ? *cross_mask : Array::full({n_lat, group}, 1.0);
  require(mask.rows() == n_lat && mask.cols() == group,
          "hip_block: cross mask is ", Array::shape_str(mask.shape),
          ", expected ", n_lat, " x ", group);

  Var q = linear(c, layer_norm_p(c, latents, prefix + ".ln_q"), dm,
                 prefix + ".cross.q");
  std::vector<Var> outs;
  outs.reserve(n_groups);
  for (std::size_t g = 0; g < n_groups; ++g) {
    Var rows = slice_rows(tokens, g * group, (g + 1) * group);
    Var k = linear(c, rows, dm, prefix + ".cross.k");
    Var v = linear(c, rows, dm, prefix + ".cross.v");
    Var red = attention_core(q, k, v, mask, heads);
    outs.push_back(add(latents, linear(c, red, dm, prefix + ".cross.o")));
  }
  Var x = outs.size() == 1 ? outs[0] : concat_rows(outs);
  const std::size_t hidden = static_cast<std::size_t>(dm * mlp_ratio);
  return x + mlp(c, layer_norm_p(c, x, prefix + ".ln2"), hidden, prefix + ".mlp");
}

struct HipLevel {
  std::size_t video_groups = 1, audio_groups = 1, latents = 1;
};

struct ZorroHipConfig {
  std::size_t d_model = 32;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  VideoDims video{};
  VideoPatch video_patch{};
  AudioDims audio{};
  AudioPatch audio_patch{};
  std::size_t n_fusion = 2;
  MaskConfig mask{};
  std::vector<HipLevel> levels{{4, 2, 2}, {2, 1, 2}, {1, 1, 4}};

  void validate() const {
    require(d_model > 0 && heads > 0 && d_model % heads == 0, "d_model ",
            d_model, " not divisible by ", heads, " heads");
    require(!levels.empty(), "need at least one level");
    require(mask.kind == MaskKind::zorro || mask.kind == MaskKind::two_streams,
            "hierarchical attention supports only the zorro and two_streams "
            "mask kinds, got ", to_string(mask.kind));
    require(mask.fusion_start_layer < levels.size(), "fusion_start_layer ",
            mask.fusion_start_layer, " must be < levels ", levels.size());
    (void)video_patch_indices(video, video_patch);
    (void)audio_patch_indices(audio, audio_patch);
    std::size_t nv = video_token_count(video, video_patch);
    std::size_t na = audio_token_count(audio, audio_patch);
    for (std::size_t l = 0; l < levels.size(); ++l) {
      require(levels[l].video_groups > 0 && levels[l].audio_groups > 0 &&
                  levels[l].latents > 0,
              "level ", l, ": groups and latents must be positive");
      require(nv % levels[l].video_groups == 0, "level ", l, ": ", nv,
              " video tokens not divisible into ", levels[l].video_groups,
              " groups");
      require(na % levels[l].audio_groups == 0, "level ", l, ": ", na,
              " audio tokens not divisible into ", levels[l].audio_groups,
              " groups");
      nv = levels[l].video_groups * levels[l].latents;
      na = levels[l].audio_groups * levels[l].latents;
    }
    if (mask.kind == MaskKind::zorro)
      require(n_fusion > 0, "zorro masking uses fusion outputs and needs n_fusion > 0");
  }

  std::size_t final_video_tokens() const {
    return levels.back().video_groups * levels.back().latents;
  }
  std::size_t final_audio_tokens() const {
    return levels.back().audio_groups * levels.back().latents;
  }
};

// Hierarchical masked backbone: each level compresses every stream with the
// same grouped cross-attention weights (latent seeds stay per-stream), while
// fusion latents thread through the levels reading the compressed streams
// once the fusion start level is reached. Streams never read each other, so
// the separation guarantee is structural, exactly as in the dense model.
class ZorroHip {
 public:
  ZorroHip(ZorroHipConfig config, std::uint64_t seed)
      : cfg_(config), seed_(seed) {
    cfg_.validate();
    video_idx_ = video_patch_indices(cfg_.video, cfg_.video_patch);
    audio_idx_ = audio_patch_indices(cfg_.audio, cfg_.audio_patch);
    decoder_mask_ = build_decoder_mask(final_layout(), cfg_.mask);
    materialize_params();
  }

  const ZorroHipConfig& config() const { return cfg_; }

  StreamLayout input_layout() const {
    return StreamLayout{video_token_count(cfg_.video, cfg_.video_patch),
                        audio_token_count(cfg_.audio, cfg_.audio_patch),
                        fusion_count()};
  }
  StreamLayout final_layout() const {
    return StreamLayout{cfg_.final_video_tokens(), cfg_.final_audio_tokens(),
                        fusion_count()};
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  AttentionMask& decoder_mask() { return decoder_mask_; }

  Ctx make_ctx(Tape& tape, bool trainable = true) {
    return Ctx{tape, params_, seed_, trainable};
  }

  ZorroVars forward(Ctx& c, Var video, Var audio) const {
    require(c.tape.val(video).shape ==
                (std::vector<std::size_t>{cfg_.video.frames, cfg_.video.height,
                                          cfg_.video.width, cfg_.video.channels}),
            "video input has shape ", shape_str(c.tape.val(video)));
    require(c.tape.val(audio).shape ==
                (std::vector<std::size_t>{cfg_.audio.time, cfg_.audio.bins}),
            "audio input has shape ", shape_str(c.tape.val(audio)));
    const StreamLayout in = input_layout();
    Var v = embed_patches(c, video, video_idx_, in.n_video,
                          cfg_.video_patch.t * cfg_.video_patch.h *
                              cfg_.video_patch.w * cfg_.video.channels,
                          cfg_.d_model, "embed.video");
    Var a = embed_patches(c, audio, audio_idx_, in.n_audio,
                          cfg_.audio_patch.t * cfg_.audio_patch.s, cfg_.d_model,
                          "embed.audio");
    const bool with_fusion = fusion_count() > 0;
    Var f;
    if (with_fusion) f = c.P("fusion.tokens", {cfg_.n_fusion, cfg_.d_model});

    for (std::size_t l = 0; l < cfg_.levels.size(); ++l) {
      const std::string prefix = "hip.level" + std::to_string(l);
      Var lat_v = c.P(prefix + ".latent.video",
                      {cfg_.levels[l].latents, cfg_.d_model});
      Var lat_a = c.P(prefix + ".latent.audio",
                      {cfg_.levels[l].latents, cfg_.d_model});
      v = hip_block(c, v, cfg_.levels[l].video_groups, lat_v, cfg_.heads,
                    cfg_.mlp_ratio, prefix);
      a = hip_block(c, a, cfg_.levels[l].audio_groups, lat_a, cfg_.heads,
                    cfg_.mlp_ratio, prefix);
      if (with_fusion) {
        Var kv = l >= cfg_.mask.fusion_start_layer
                     ? concat_rows(std::vector<Var>{v, a, f})
                     : f;
        f = fusion_update(c, f, kv, prefix + ".fusion");
      }
    }
    std::vector<Var> final_rows{v, a};
    if (with_fusion) final_rows.push_back(f);
    Var tokens = concat_rows(final_rows);
    return decode_outputs(c, tokens, decoder_mask_, cfg_.heads, "decoder");
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
  std::size_t fusion_count() const {
    return cfg_.mask.kind == MaskKind::two_streams ? 0 : cfg_.n_fusion;
  }

  // Standard pre-norm cross-attention update for the fusion latents.
  Var fusion_update(Ctx& c, Var f, Var kv, const std::string& prefix) const {
    const std::size_t dm = cfg_.d_model;
    Var q = linear(c, layer_norm_p(c, f, prefix + ".ln_q"), dm, prefix + ".q");
    Var k = linear(c, kv, dm, prefix + ".k");
    Var v = linear(c, kv, dm, prefix + ".v");
    const Array ones =
        Array::full({c.tape.val(f).rows(), c.tape.val(kv).rows()}, 1.0);
    Var red = attention_core(q, k, v, ones, cfg_.heads);
    f = f + linear(c, red, dm, prefix + ".o");
    const std::size_t hidden = static_cast<std::size_t>(dm * cfg_.mlp_ratio);
    return f + mlp(c, layer_norm_p(c, f, prefix + ".ln2"), hidden,
                   prefix + ".mlp");
  }

  void materialize_params() {
    Tape t;
    Ctx c = make_ctx(t, false);
    (void)forward(c,
                  t.constant(Array::zeros({cfg_.video.frames, cfg_.video.height,
                                           cfg_.video.width, cfg_.video.channels})),
                  t.constant(Array::zeros({cfg_.audio.time, cfg_.audio.bins})));
  }

  ZorroHipConfig cfg_;
  std::uint64_t seed_;
  ParamStore params_;
  std::shared_ptr<const std::vector<std::size_t>> video_idx_, audio_idx_;
  AttentionMask decoder_mask_{};
};

}  // namespace zorro
