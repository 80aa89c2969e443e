#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "zorro/common.hpp"
#include "zorro/hip.hpp"
#include "zorro/swin.hpp"
#include "zorro/synth.hpp"
#include "zorro/vit.hpp"

namespace zorro {

enum class Arch { vit, swin, hip };
enum class Objective { contrastive, supervised, supervised_multilabel };

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::vit: return "vit";
    case Arch::swin: return "swin";
    default: return "hip";
  }
}
inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::contrastive: return "contrastive";
    case Objective::supervised: return "supervised";
    default: return "supervised_multilabel";
  }
}

// Full run description, parsed from INI-style text with sections
// {model, mask, loss, data, optim, run}. Keys outside the schema are errors:
// a typo must never silently fall back to a default.
struct RunConfig {
  // [model]
  Arch arch = Arch::vit;
  std::size_t d_model = 32, layers = 4, heads = 4;
  double mlp_ratio = 4.0;
  std::size_t n_fusion = 2;
  WeightSharing sharing = WeightSharing::shared;
  VideoDims video{};
  VideoPatch video_patch{};
  AudioDims audio{};
  AudioPatch audio_patch{};
  SwinWindow3d video_window{1, 2, 2};
  SwinWindow2d audio_window{2, 2};
  std::vector<HipLevel> hip_levels{{4, 2, 2}, {2, 1, 2}, {1, 1, 4}};
  // [mask]
  MaskConfig mask{};
  // [loss]
  Objective objective = Objective::contrastive;
  double tau = 0.08;
  bool include_fusion_terms = true;
  bool symmetrize = false;
  std::size_t projector_hidden = 32;
  std::size_t embedding_dim = 16;
  std::size_t n_classes = 8;
  // [data]
  std::size_t latent_dim = 8;
  double noise_sigma = 0.0;
  double class_spread = 0.5;
  double coupling_rho = 1.0;
  std::size_t pair_key_dim = 8;
  double pair_key_scale = 0.0;
  bool mixed_unimodal = false;
  // [optim]
  std::string optimizer = "adam";  // adam | sgd
  double lr_max = 3e-3, lr_min = 0.0;
  std::size_t warmup_steps = 20;
  double weight_decay = 0.0;
  double momentum = 0.9;
  // [run]
  std::uint64_t seed = 1;
  std::size_t steps = 200;
  std::size_t batch_size = 8;
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 0;  // 0: only at the end

  static RunConfig parse_text(const std::string& text);
  static RunConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail("config: cannot open ", path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
  }

  std::string canonical_text() const;
  std::uint64_t hash() const { return fnv1a64(canonical_text()); }

  void validate() const {
    if (arch == Arch::vit) vit_config().validate();
    if (arch == Arch::swin) swin_config().validate();
    if (arch == Arch::hip) hip_config().validate();
    synth_spec().validate();
    require(optimizer == "adam" || optimizer == "sgd",
            "config: optimizer must be adam or sgd, got ", optimizer);
    require(tau > 0, "config: tau must be positive");
    require(batch_size > 0 && steps > 0, "config: steps and batch_size must be positive");
    require(embedding_dim > 0 && projector_hidden > 0,
            "config: projector sizes must be positive");
    if (objective == Objective::contrastive) {
      require(!mixed_unimodal,
              "config: mixed_unimodal training needs a supervised objective; "
              "contrastive pairs require both modalities");
      if (include_fusion_terms)
        require(mask.kind != MaskKind::two_streams,
                "config: the two_streams masking has no fusion output, so the "
                "fusion contrastive terms cannot be formed; set "
                "include_fusion_terms = false");
    }
    if (objective == Objective::contrastive)
      require(batch_size >= 2, "config: contrastive training needs batch_size >= 2");
    require(n_classes == synth_spec().n_classes, "internal: class count mismatch");
  }

  ZorroViTConfig vit_config() const {
    ZorroViTConfig c;
    c.d_model = d_model;
    c.layers = layers;
    c.heads = heads;
    c.mlp_ratio = mlp_ratio;
    c.video = video;
    c.video_patch = video_patch;
    c.audio = audio;
    c.audio_patch = audio_patch;
    c.n_fusion = n_fusion;
    c.mask = mask;
    c.sharing = sharing;
    return c;
  }
  ZorroSwinConfig swin_config() const {
    ZorroSwinConfig c;
    c.d_model = d_model;
    c.layers = layers;
    c.heads = heads;
    c.mlp_ratio = mlp_ratio;
    c.video = video;
    c.video_patch = video_patch;
    c.audio = audio;
    c.audio_patch = audio_patch;
    c.video_window = video_window;
    c.audio_window = audio_window;
    c.n_fusion = n_fusion;
    c.mask = mask;
    return c;
  }
  ZorroHipConfig hip_config() const {
    ZorroHipConfig c;
    c.d_model = d_model;
    c.heads = heads;
    c.mlp_ratio = mlp_ratio;
    c.video = video;
    c.video_patch = video_patch;
    c.audio = audio;
    c.audio_patch = audio_patch;
    c.n_fusion = n_fusion;
    c.mask = mask;
    c.levels = hip_levels;
    return c;
  }
  SynthSpec synth_spec() const {
    SynthSpec s;
    s.latent_dim = latent_dim;
    s.n_classes = n_classes;
    s.video = video;
    s.audio = audio;
    s.noise_sigma = noise_sigma;
    s.class_spread = class_spread;
    s.coupling_rho = coupling_rho;
    s.pair_key_dim = pair_key_dim;
    s.pair_key_scale = pair_key_scale;
    s.seed = seed;
    return s;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::size_t parse_size(const std::string& where, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long n = std::stoll(v, &pos);
    if (pos != v.size() || n < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (...) {
    fail("config: ", where, ": expected a non-negative integer, got '", v, "'");
  }
}

inline double parse_dbl(const std::string& where, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (...) {
    fail("config: ", where, ": expected a number, got '", v, "'");
  }
}

inline bool parse_bool(const std::string& where, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail("config: ", where, ": expected true or false, got '", v, "'");
}

inline std::vector<std::size_t> parse_dims(const std::string& where,
                                           const std::string& v,
                                           std::size_t want) {
  auto parts = split(v, 'x');
  if (parts.size() != want)
    fail("config: ", where, ": expected ", want, " sizes like 2x8x8, got '", v, "'");
  std::vector<std::size_t> out;
  for (const auto& p : parts) out.push_back(parse_size(where, trim(p)));
  return out;
}

}  // namespace detail

inline RunConfig RunConfig::parse_text(const std::string& text) {
  RunConfig c;
  static const std::set<std::string> kSections{"model", "mask", "loss",
                                               "data",  "optim", "run"};
  std::string section;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail("config line ", lineno, ": malformed section '", s, "'");
      section = detail::trim(s.substr(1, s.size() - 2));
      if (!kSections.count(section))
        fail("config line ", lineno, ": unknown section [", section, "]");
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      fail("config line ", lineno, ": expected key = value, got '", s, "'");
    if (section.empty()) fail("config line ", lineno, ": key before any [section]");
    const std::string key = detail::trim(s.substr(0, eq));
    const std::string val = detail::trim(s.substr(eq + 1));
    const std::string where = section + "." + key;
    if (!seen.insert(where).second) fail("config: duplicate key ", where);

    using namespace detail;
    if (where == "model.arch") {
      if (val == "vit") c.arch = Arch::vit;
      else if (val == "swin") c.arch = Arch::swin;
      else if (val == "hip") c.arch = Arch::hip;
      else fail("config: model.arch must be vit, swin or hip, got '", val, "'");
    } else if (where == "model.d_model") {
      c.d_model = parse_size(where, val);
    } else if (where == "model.layers") {
      c.layers = parse_size(where, val);
    } else if (where == "model.heads") {
      c.heads = parse_size(where, val);
    } else if (where == "model.mlp_ratio") {
      c.mlp_ratio = parse_dbl(where, val);
    } else if (where == "model.n_fusion") {
      c.n_fusion = parse_size(where, val);
    } else if (where == "model.sharing") {
      if (val == "shared") c.sharing = WeightSharing::shared;
      else if (val == "per_stream") c.sharing = WeightSharing::per_stream;
      else fail("config: model.sharing must be shared or per_stream, got '", val, "'");
    } else if (where == "model.video") {
      auto d = parse_dims(where, val, 4);
      c.video = {d[0], d[1], d[2], d[3]};
    } else if (where == "model.video_patch") {
      auto d = parse_dims(where, val, 3);
      c.video_patch = {d[0], d[1], d[2]};
    } else if (where == "model.audio") {
      auto d = parse_dims(where, val, 2);
      c.audio = {d[0], d[1]};
    } else if (where == "model.audio_patch") {
      auto d = parse_dims(where, val, 2);
      c.audio_patch = {d[0], d[1]};
    } else if (where == "model.video_window") {
      auto d = parse_dims(where, val, 3);
      c.video_window = {d[0], d[1], d[2]};
    } else if (where == "model.audio_window") {
      auto d = parse_dims(where, val, 2);
      c.audio_window = {d[0], d[1]};
    } else if (where == "model.hip_levels") {
      c.hip_levels.clear();
      for (const auto& lvl : split(val, ',')) {
        auto f = split(trim(lvl), ':');
        if (f.size() != 3)
          fail("config: model.hip_levels: each level is vgroups:agroups:latents, got '",
               lvl, "'");
        c.hip_levels.push_back({parse_size(where, trim(f[0])),
                                parse_size(where, trim(f[1])),
                                parse_size(where, trim(f[2]))});
      }
    } else if (where == "mask.kind") {
      c.mask.kind = mask_kind_from_string(val);
    } else if (where == "mask.fusion_start_layer") {
      c.mask.fusion_start_layer = parse_size(where, val);
    } else if (where == "loss.objective") {
      if (val == "contrastive") c.objective = Objective::contrastive;
      else if (val == "supervised") c.objective = Objective::supervised;
      else if (val == "supervised_multilabel") c.objective = Objective::supervised_multilabel;
      else fail("config: loss.objective must be contrastive, supervised or "
                "supervised_multilabel, got '", val, "'");
    } else if (where == "loss.tau") {
      c.tau = parse_dbl(where, val);
    } else if (where == "loss.include_fusion_terms") {
      c.include_fusion_terms = parse_bool(where, val);
    } else if (where == "loss.symmetrize") {
      c.symmetrize = parse_bool(where, val);
    } else if (where == "loss.projector_hidden") {
      c.projector_hidden = parse_size(where, val);
    } else if (where == "loss.embedding_dim") {
      c.embedding_dim = parse_size(where, val);
    } else if (where == "loss.n_classes") {
      c.n_classes = parse_size(where, val);
    } else if (where == "data.latent_dim") {
      c.latent_dim = parse_size(where, val);
    } else if (where == "data.noise_sigma") {
      c.noise_sigma = parse_dbl(where, val);
    } else if (where == "data.class_spread") {
      c.class_spread = parse_dbl(where, val);
    } else if (where == "data.coupling_rho") {
      c.coupling_rho = parse_dbl(where, val);
    } else if (where == "data.pair_key_dim") {
      c.pair_key_dim = parse_size(where, val);
    } else if (where == "data.pair_key_scale") {
      c.pair_key_scale = parse_dbl(where, val);
    } else if (where == "data.mixed_unimodal") {
      c.mixed_unimodal = parse_bool(where, val);
    } else if (where == "optim.optimizer") {
      c.optimizer = val;
    } else if (where == "optim.lr_max") {
      c.lr_max = parse_dbl(where, val);
    } else if (where == "optim.lr_min") {
      c.lr_min = parse_dbl(where, val);
    } else if (where == "optim.warmup_steps") {
      c.warmup_steps = parse_size(where, val);
    } else if (where == "optim.weight_decay") {
      c.weight_decay = parse_dbl(where, val);
    } else if (where == "optim.momentum") {
      c.momentum = parse_dbl(where, val);
    } else if (where == "run.seed") {
      c.seed = static_cast<std::uint64_t>(parse_size(where, val));
    } else if (where == "run.steps") {
      c.steps = parse_size(where, val);
    } else if (where == "run.batch_size") {
      c.batch_size = parse_size(where, val);
    } else if (where == "run.log_every") {
      c.log_every = parse_size(where, val);
    } else if (where == "run.checkpoint_every") {
      c.checkpoint_every = parse_size(where, val);
    } else {
      fail("config: unknown key ", where);
    }
  }
  return c;
}

inline std::string RunConfig::canonical_text() const {
  std::ostringstream o;
  auto dims3 = [](std::size_t a, std::size_t b, std::size_t cc) {
    return detail::str(a, "x", b, "x", cc);
  };
  o << "[model]\n";
  o << "arch = " << to_string(arch) << "\n";
  o << "d_model = " << d_model << "\n";
  o << "layers = " << layers << "\n";
  o << "heads = " << heads << "\n";
  o << "mlp_ratio = " << format_double(mlp_ratio) << "\n";
  o << "n_fusion = " << n_fusion << "\n";
  o << "sharing = " << to_string(sharing) << "\n";
  o << "video = " << video.frames << "x" << video.height << "x" << video.width
    << "x" << video.channels << "\n";
  o << "video_patch = " << dims3(video_patch.t, video_patch.h, video_patch.w) << "\n";
  o << "audio = " << audio.time << "x" << audio.bins << "\n";
  o << "audio_patch = " << audio_patch.t << "x" << audio_patch.s << "\n";
  o << "video_window = " << dims3(video_window.t, video_window.h, video_window.w)
    << "\n";
  o << "audio_window = " << audio_window.t << "x" << audio_window.s << "\n";
  o << "hip_levels = ";
  for (std::size_t i = 0; i < hip_levels.size(); ++i)
    o << (i ? "," : "") << hip_levels[i].video_groups << ":"
      << hip_levels[i].audio_groups << ":" << hip_levels[i].latents;
  o << "\n";
  o << "[mask]\n";
  o << "kind = " << to_string(mask.kind) << "\n";
  o << "fusion_start_layer = " << mask.fusion_start_layer << "\n";
  o << "[loss]\n";
  o << "objective = " << to_string(objective) << "\n";
  o << "tau = " << format_double(tau) << "\n";
  o << "include_fusion_terms = " << (include_fusion_terms ? "true" : "false") << "\n";
  o << "symmetrize = " << (symmetrize ? "true" : "false") << "\n";
  o << "projector_hidden = " << projector_hidden << "\n";
  o << "embedding_dim = " << embedding_dim << "\n";
  o << "n_classes = " << n_classes << "\n";
  o << "[data]\n";
  o << "latent_dim = " << latent_dim << "\n";
  o << "noise_sigma = " << format_double(noise_sigma) << "\n";
  o << "class_spread = " << format_double(class_spread) << "\n";
  o << "coupling_rho = " << format_double(coupling_rho) << "\n";
  o << "pair_key_dim = " << pair_key_dim << "\n";
  o << "pair_key_scale = " << format_double(pair_key_scale) << "\n";
  o << "mixed_unimodal = " << (mixed_unimodal ? "true" : "false") << "\n";
  o << "[optim]\n";
  o << "optimizer = " << optimizer << "\n";
  o << "lr_max = " << format_double(lr_max) << "\n";
  o << "lr_min = " << format_double(lr_min) << "\n";
  o << "warmup_steps = " << warmup_steps << "\n";
  o << "weight_decay = " << format_double(weight_decay) << "\n";
  o << "momentum = " << format_double(momentum) << "\n";
  o << "[run]\n";
  o << "seed = " << seed << "\n";
  o << "steps = " << steps << "\n";
  o << "batch_size = " << batch_size << "\n";
  o << "log_every = " << log_every << "\n";
  o << "checkpoint_every = " << checkpoint_every << "\n";
  return o.str();
}

}  // namespace zorro
