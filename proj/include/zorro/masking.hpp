#pragma once

#include <string>
#include <vector>

#include "zorro/array.hpp"
#include "zorro/common.hpp"

namespace zorro {

// Token order in every sequence this library builds: [video | audio | fusion].
struct StreamLayout {
  std::size_t n_video = 0;
  std::size_t n_audio = 0;
  std::size_t n_fusion = 0;

  std::size_t total() const { return n_video + n_audio + n_fusion; }
  std::size_t video_begin() const { return 0; }
  std::size_t video_end() const { return n_video; }
  std::size_t audio_begin() const { return n_video; }
  std::size_t audio_end() const { return n_video + n_audio; }
  std::size_t fusion_begin() const { return n_video + n_audio; }
  std::size_t fusion_end() const { return total(); }
};

enum class Stream { video = 0, audio = 1, fusion = 2 };

inline Stream stream_of(const StreamLayout& l, std::size_t token) {
  require(token < l.total(), "stream_of: token ", token, " out of range for ",
          l.total(), " tokens");
  if (token < l.video_end()) return Stream::video;
  if (token < l.audio_end()) return Stream::audio;
  return Stream::fusion;
}

// The four attention-routing configurations under study:
//   zorro       - unimodal tokens attend only their own stream; fusion tokens
//                 attend everything. Unimodal representations stay pure.
//   two_streams - fully separate streams, no fusion participation.
//   input_level - no masking at all (vanilla joint transformer).
//   bottleneck  - zorro plus unimodal rows may also read the fusion columns,
//                 which opens an indirect cross-modal path.
enum class MaskKind { zorro, two_streams, input_level, bottleneck };

inline std::string to_string(MaskKind k) {
  switch (k) {
    case MaskKind::zorro: return "zorro";
    case MaskKind::two_streams: return "two_streams";
    case MaskKind::input_level: return "input_level";
    case MaskKind::bottleneck: return "bottleneck";
  }
  return "?";
}

inline MaskKind mask_kind_from_string(const std::string& s) {
  if (s == "zorro") return MaskKind::zorro;
  if (s == "two_streams") return MaskKind::two_streams;
  if (s == "input_level") return MaskKind::input_level;
  if (s == "bottleneck") return MaskKind::bottleneck;
  throw std::invalid_argument(
      detail::str("unknown mask kind \"", s,
                  "\" (expected zorro, two_streams, input_level, bottleneck)"));
}

// fusion_start_layer delays fusion participation: at layers below it the
// fusion block is inert (fusion rows and columns attend / are attended only
// among themselves). Applies to kinds that route through fusion (zorro,
// bottleneck); input_level is unmasked by definition and two_streams keeps
// fusion self-only at every layer anyway.
struct MaskConfig {
  MaskKind kind = MaskKind::zorro;
  std::size_t fusion_start_layer = 0;
};

// Binary attention mask; m(i, j) == 1 means query token i may attend key
// token j.
struct AttentionMask {
  Array m;

  std::size_t rows() const { return m.rows(); }
  std::size_t cols() const { return m.cols(); }

  // Plain 0/1 grid, one row per line, single-space separated.
  std::string to_text() const {
    std::string out;
    for (std::size_t i = 0; i < m.rows(); ++i) {
      for (std::size_t j = 0; j < m.cols(); ++j) {
        if (j) out += ' ';
        out += m(i, j) == 1.0 ? '1' : '0';
      }
      out += '\n';
    }
    return out;
  }
};

inline AttentionMask build_self_mask(const StreamLayout& layout,
                                     const MaskConfig& config,
                                     std::size_t layer_index) {
  const std::size_t n = layout.total();
  require(n > 0, "build_self_mask: empty layout");
  Array m = Array::zeros({n, n});
  const bool fusion_active = layer_index >= config.fusion_start_layer;

  auto fill = [&](std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t j = c0; j < c1; ++j) m(i, j) = 1.0;
  };

  switch (config.kind) {
    case MaskKind::input_level:
      fill(0, n, 0, n);
      break;
    case MaskKind::two_streams:
      fill(layout.video_begin(), layout.video_end(), layout.video_begin(),
           layout.video_end());
      fill(layout.audio_begin(), layout.audio_end(), layout.audio_begin(),
           layout.audio_end());
      fill(layout.fusion_begin(), layout.fusion_end(), layout.fusion_begin(),
           layout.fusion_end());
      break;
    case MaskKind::zorro:
    case MaskKind::bottleneck:
      fill(layout.video_begin(), layout.video_end(), layout.video_begin(),
           layout.video_end());
      fill(layout.audio_begin(), layout.audio_end(), layout.audio_begin(),
           layout.audio_end());
      fill(layout.fusion_begin(), layout.fusion_end(), layout.fusion_begin(),
           layout.fusion_end());
      if (fusion_active) {
        // fusion reads everything
        fill(layout.fusion_begin(), layout.fusion_end(), 0, n);
        if (config.kind == MaskKind::bottleneck) {
          // unimodal rows may also read fusion columns
          fill(layout.video_begin(), layout.video_end(), layout.fusion_begin(),
               layout.fusion_end());
          fill(layout.audio_begin(), layout.audio_end(), layout.fusion_begin(),
               layout.fusion_end());
        }
      }
      break;
  }
  return AttentionMask{std::move(m)};
}

// Decoder query rows, in this fixed order.
inline constexpr std::size_t kRowOv = 0;
inline constexpr std::size_t kRowOa = 1;
inline constexpr std::size_t kRowOf = 2;
inline constexpr std::size_t kRowOg = 3;

inline std::size_t decoder_rows(MaskKind kind) {
  return kind == MaskKind::two_streams ? 2 : 4;
}

// Cross-attention mask for the output decoder: o_v reads video columns, o_a
// audio columns, o_F fusion columns, o_G everything. two_streams has no
// fusion participation, so only the o_v and o_a rows exist there.
inline AttentionMask build_decoder_mask(const StreamLayout& layout,
                                        const MaskConfig& config) {
  const std::size_t n = layout.total();
  require(n > 0, "build_decoder_mask: empty layout");
  const std::size_t rows = decoder_rows(config.kind);
  if (rows == 4)
    require(layout.n_fusion > 0, "build_decoder_mask: o_F output requested (",
            to_string(config.kind), " mask) but layout has no fusion tokens");
  Array m = Array::zeros({rows, n});
  for (std::size_t j = layout.video_begin(); j < layout.video_end(); ++j)
    m(kRowOv, j) = 1.0;
  for (std::size_t j = layout.audio_begin(); j < layout.audio_end(); ++j)
    m(kRowOa, j) = 1.0;
  if (rows == 4) {
    for (std::size_t j = layout.fusion_begin(); j < layout.fusion_end(); ++j)
      m(kRowOf, j) = 1.0;
    for (std::size_t j = 0; j < n; ++j) m(kRowOg, j) = 1.0;
  }
  return AttentionMask{std::move(m)};
}

// Transitive closure of information flow through a stack of masked attention
// layers, masks[0] applied first. Entry (i, j) == 1 iff input token j can
// influence token i's representation after the whole stack. Each layer also
// carries every token to itself (residual path), hence the OR with identity.
inline Array reachability(const std::vector<AttentionMask>& masks) {
  require(!masks.empty(), "reachability: empty mask sequence");
  const std::size_t n = masks[0].m.rows();
  for (const AttentionMask& am : masks)
    require(am.m.ndim() == 2 && am.m.rows() == n && am.m.cols() == n,
            "reachability: masks must be square and same side, got ",
            shape_str(am.m), " vs side ", n);
  Array reach = Array::identity(n);
  for (const AttentionMask& am : masks) {
    Array step = am.m;
    for (std::size_t i = 0; i < n; ++i) step(i, i) = 1.0;
    // boolean product: next = step * reach
    Array next = Array::zeros({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < n; ++k)
        if (step(i, k) == 1.0)
          for (std::size_t j = 0; j < n; ++j)
            if (reach(k, j) == 1.0) next(i, j) = 1.0;
    reach = std::move(next);
  }
  return reach;
}

}  // namespace zorro
