#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "zorro/masking.hpp"
#include "zorro/model_common.hpp"
#include "zorro/params.hpp"
#include "zorro/tape.hpp"

namespace zorro {

struct ZorroViTConfig {
  std::size_t d_model = 32;
  std::size_t layers = 4;
  std::size_t heads = 4;
  double mlp_ratio = 4.0;
  VideoDims video{};
  VideoPatch video_patch{};
  AudioDims audio{};
  AudioPatch audio_patch{};
  std::size_t n_fusion = 2;
  MaskConfig mask{};
  WeightSharing sharing = WeightSharing::shared;

  void validate() const {
    require(d_model > 0 && layers > 0 && heads > 0, "model sizes must be positive");
    require(d_model % heads == 0, "d_model ", d_model, " not divisible by ",
            heads, " heads");
    require(mlp_ratio > 0, "mlp_ratio must be positive");
    require(mask.fusion_start_layer < layers, "fusion_start_layer ",
            mask.fusion_start_layer, " must be < layers ", layers);
    // Trip the divisibility checks early.
    (void)video_token_count_or_throw();
    (void)audio_token_count_or_throw();
    if (mask.kind == MaskKind::zorro || mask.kind == MaskKind::bottleneck ||
        mask.kind == MaskKind::input_level)
      require(n_fusion > 0, "mask kind ", to_string(mask.kind),
              " uses fusion outputs and needs n_fusion > 0");
  }

  std::size_t video_token_count_or_throw() const {
    return (void)video_patch_indices(video, video_patch),
           video_token_count(video, video_patch);
  }
  std::size_t audio_token_count_or_throw() const {
    return (void)audio_patch_indices(audio, audio_patch),
           audio_token_count(audio, audio_patch);
  }
};

// The masked multimodal transformer: one trunk over the concatenation
// [video tokens | audio tokens | fusion tokens], with per-layer binary
// attention masks deciding which streams may read which. All mask kinds run
// through the identical forward; only the 0/1 patterns differ.
class ZorroViT {
 public:
  ZorroViT(ZorroViTConfig config, std::uint64_t seed)
      : cfg_(config), seed_(seed) {
    cfg_.validate();
    video_idx_ = video_patch_indices(cfg_.video, cfg_.video_patch);
    audio_idx_ = audio_patch_indices(cfg_.audio, cfg_.audio_patch);
    for (std::size_t l = 0; l < cfg_.layers; ++l)
      self_masks_.push_back(build_self_mask(layout(), cfg_.mask, l));
    decoder_mask_ = build_decoder_mask(layout(), cfg_.mask);
    materialize_params();
  }

  const ZorroViTConfig& config() const { return cfg_; }
  std::uint64_t seed() const { return seed_; }

  StreamLayout layout() const {
    return StreamLayout{video_token_count(cfg_.video, cfg_.video_patch),
                        audio_token_count(cfg_.audio, cfg_.audio_patch),
                        cfg_.mask.kind == MaskKind::two_streams ? 0
                                                                : cfg_.n_fusion};
  }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Mutable on purpose: the verification suite corrupts entries to prove the
  // isolation checks actually depend on the masks.
  std::vector<AttentionMask>& self_masks() { return self_masks_; }
  AttentionMask& decoder_mask() { return decoder_mask_; }

  Ctx make_ctx(Tape& tape, bool trainable = true) {
    return Ctx{tape, params_, seed_, trainable};
  }

  Var embed_video(Ctx& c, Var video) const {
    check_shape(c.tape.val(video),
                {cfg_.video.frames, cfg_.video.height, cfg_.video.width,
                 cfg_.video.channels},
                "video");
    return embed_patches(c, video, video_idx_, layout().n_video,
                         cfg_.video_patch.t * cfg_.video_patch.h *
                             cfg_.video_patch.w * cfg_.video.channels,
                         cfg_.d_model, "embed.video");
  }

  Var embed_audio(Ctx& c, Var audio) const {
    check_shape(c.tape.val(audio), {cfg_.audio.time, cfg_.audio.bins}, "audio");
    return embed_patches(c, audio, audio_idx_, layout().n_audio,
                         cfg_.audio_patch.t * cfg_.audio_patch.s, cfg_.d_model,
                         "embed.audio");
  }

  // Trunk only: embedded tokens through every masked block.
  Var encode(Ctx& c, Var video, Var audio) const {
    const StreamLayout l = layout();
    std::vector<Var> rows{embed_video(c, video), embed_audio(c, audio)};
    if (l.n_fusion > 0)
      rows.push_back(c.P("fusion.tokens", {l.n_fusion, cfg_.d_model}));
    Var x = concat_rows(rows);
    const StreamLayout* ps =
        cfg_.sharing == WeightSharing::per_stream ? &l : nullptr;
    for (std::size_t i = 0; i < cfg_.layers; ++i)
      x = transformer_block(c, x, self_masks_[i].m, cfg_.heads, cfg_.mlp_ratio,
                            "trunk.layer" + std::to_string(i), ps);
    return x;
  }

  // Readout from externally supplied final token states; lets tests swap the
  // trunk out from under the decoder.
  ZorroVars decode_only(Ctx& c, Var tokens) const {
    check_shape(c.tape.val(tokens), {layout().total(), cfg_.d_model}, "tokens");
    return decode_outputs(c, tokens, decoder_mask_, cfg_.heads, "decoder");
  }

  ZorroVars forward(Ctx& c, Var video, Var audio) const {
    return decode_outputs(c, encode(c, video, audio), decoder_mask_, cfg_.heads,
                          "decoder");
  }

  // Inference convenience: values only, fresh tape, no gradients.
  ZorroOutputs forward_eval(const Array& video, const Array& audio) {
    Tape t;
    Ctx c = make_ctx(t, /*trainable=*/false);
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
  static void check_shape(const Array& a, const std::vector<std::size_t>& want,
                          const char* what) {
    require(a.shape == want, what, " input has shape ", shape_str(a),
            ", expected ", Array::shape_str(want));
  }

  // Run one throwaway forward so the store holds every parameter this config
  // can touch; checkpoints then cover the full model even before training.
  void materialize_params() {
    Tape t;
    Ctx c = make_ctx(t, /*trainable=*/false);
    (void)forward(c,
                  t.constant(Array::zeros({cfg_.video.frames, cfg_.video.height,
                                           cfg_.video.width, cfg_.video.channels})),
                  t.constant(Array::zeros({cfg_.audio.time, cfg_.audio.bins})));
  }

  ZorroViTConfig cfg_;
  std::uint64_t seed_;
  ParamStore params_;
  std::shared_ptr<const std::vector<std::size_t>> video_idx_, audio_idx_;
  std::vector<AttentionMask> self_masks_;
  AttentionMask decoder_mask_{};
};

}  // namespace zorro
