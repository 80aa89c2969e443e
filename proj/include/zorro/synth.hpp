#pragma once

#include <cstdint>
#include <vector>

#include "zorro/array.hpp"
#include "zorro/model_common.hpp"
#include "zorro/rng.hpp"

namespace zorro {

// Paired audio/video toy data with a controllable shared factor. Each sample
// draws a latent u = sqrt(1-spread^2) * anchor[label] + spread * jitter on
// (approximately) the unit sphere; both modalities are independent random
// linear projections of the *same* latent plus i.i.d. pixel noise:
//
//   video = W_v u + sigma * eps_v,   audio = W_a u + sigma * eps_a.
//
// With coupling_rho < 1 a sample keeps its video but, with probability
// 1 - rho, swaps the audio for one generated from an entirely independent
// sample (own label, own latent), which severs the pairing signal.
//
// When pair_key_scale > 0 each modality additionally carries a private
// "key": a low-dimensional sample-specific nuisance vector, mapped through a
// fixed projection and added to the pixels. The video key never appears in
// audio and vice versa, and keys carry no label information. An encoder that
// reads only one modality can do nothing useful with them, but any network
// whose audio and video outputs are computed from both modalities at once can
// emit the same key from both heads and match pairs on it while ignoring the
// shared latent entirely — a high-variance shortcut that exists exactly when
// information is allowed to cross between the modalities.
struct SynthSpec {
  std::size_t latent_dim = 8;
  std::size_t n_classes = 8;
  VideoDims video{};   // 2x8x8x1 = 128 values
  AudioDims audio{};   // 8x8 = 64 values
  double noise_sigma = 0.0;
  double class_spread = 0.5;  // fraction of latent variance not tied to class
  double coupling_rho = 1.0;
  std::size_t pair_key_dim = 8;    // dimensionality of each modality's key
  double pair_key_scale = 0.0;     // per-pixel key magnitude; 0 disables keys
  std::uint64_t seed = 0;

  void validate() const {
    require(latent_dim >= n_classes, "latent_dim ", latent_dim,
            " must be >= n_classes ", n_classes,
            " so class anchors can be orthonormal");
    require(n_classes >= 2, "need at least 2 classes, got ", n_classes);
    require(noise_sigma >= 0, "noise_sigma must be >= 0");
    require(class_spread >= 0 && class_spread <= 1, "class_spread must be in [0,1]");
    require(coupling_rho >= 0 && coupling_rho <= 1, "coupling_rho must be in [0,1]");
    require(pair_key_scale >= 0, "pair_key_scale must be >= 0");
    require(pair_key_scale == 0 || pair_key_dim > 0,
            "pair_key_dim must be positive when pair_key_scale > 0");
  }
};

struct SynthBatch {
  std::vector<Array> video, audio;        // per-sample tensors
  std::vector<std::size_t> labels;        // label of the video sample
  std::vector<bool> video_present, audio_present;
  std::vector<bool> coupled;              // audio belongs to the same latent

  std::size_t size() const { return labels.size(); }
};

// Fixed per-spec structure: orthonormal class anchors and the two projection
// maps. Deterministic in the spec seed alone.
class SynthGenerator {
 public:
  explicit SynthGenerator(SynthSpec spec) : spec_(spec) {
    spec_.validate();
    Rng root(spec_.seed);
    anchors_ = orthonormal_rows(root.fork("anchors"), spec_.n_classes,
                                spec_.latent_dim);
    w_video_ = root.fork("w_video").normals({video_elems(), spec_.latent_dim});
    w_audio_ = root.fork("w_audio").normals({audio_elems(), spec_.latent_dim});
    if (spec_.pair_key_scale > 0) {
      key_video_ =
          root.fork("key_video").normals({video_elems(), spec_.pair_key_dim});
      key_audio_ =
          root.fork("key_audio").normals({audio_elems(), spec_.pair_key_dim});
    }
  }

  const SynthSpec& spec() const { return spec_; }
  const Array& anchors() const { return anchors_; }
  const Array& video_map() const { return w_video_; }
  const Array& audio_map() const { return w_audio_; }

  std::size_t video_elems() const {
    return spec_.video.frames * spec_.video.height * spec_.video.width *
           spec_.video.channels;
  }
  std::size_t audio_elems() const { return spec_.audio.time * spec_.audio.bins; }

  // Pure function of (spec.seed, batch_index, i): regenerating any batch at
  // any time yields bit-identical samples. Labels are balanced: counts across
  // the batch differ by at most one, order shuffled per batch.
  SynthBatch generate(std::size_t batch_size, std::uint64_t batch_index) const {
    require(batch_size > 0, "batch_size must be positive");
    Rng batch = Rng(spec_.seed).fork("batch").fork(batch_index);
    std::vector<std::size_t> labels(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) labels[i] = i % spec_.n_classes;
    Rng shuffle = batch.fork("shuffle");
    for (std::size_t i = batch_size; i > 1; --i) {
      const auto j = static_cast<std::size_t>(shuffle.uniform() * double(i));
      std::swap(labels[i - 1], labels[j < i ? j : i - 1]);
    }

    SynthBatch out;
    out.labels = labels;
    out.video.reserve(batch_size);
    out.audio.reserve(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      Rng s = batch.fork(static_cast<std::uint64_t>(i));
      const bool coupled =
          spec_.coupling_rho >= 1.0 || s.fork("gate").uniform() < spec_.coupling_rho;
      Array u = latent_for(labels[i], s.fork("latent"));
      out.video.push_back(project(w_video_, u, s.fork("video_noise"),
                                  {spec_.video.frames, spec_.video.height,
                                   spec_.video.width, spec_.video.channels},
                                  key_video_, s.fork("key_video")));
      if (coupled) {
        out.audio.push_back(project(w_audio_, u, s.fork("audio_noise"),
                                    {spec_.audio.time, spec_.audio.bins},
                                    key_audio_, s.fork("key_audio")));
      } else {
        Rng alt = s.fork("alt");
        const auto alt_label = static_cast<std::size_t>(
            alt.fork("label").uniform() * double(spec_.n_classes));
        Array u2 = latent_for(alt_label < spec_.n_classes ? alt_label
                                                          : spec_.n_classes - 1,
                              alt.fork("latent"));
        out.audio.push_back(project(w_audio_, u2, s.fork("audio_noise"),
                                    {spec_.audio.time, spec_.audio.bins},
                                    key_audio_, alt.fork("key_audio")));
      }
      out.video_present.push_back(true);
      out.audio_present.push_back(true);
      out.coupled.push_back(coupled);
    }
    return out;
  }

 private:
  Array latent_for(std::size_t label, Rng stream) const {
    const double b = spec_.class_spread;
    const double a = std::sqrt(1.0 - b * b);
    Array jitter = stream.normals({spec_.latent_dim},
                                  1.0 / std::sqrt(double(spec_.latent_dim)));
    Array u = Array::zeros({spec_.latent_dim});
    for (std::size_t k = 0; k < spec_.latent_dim; ++k)
      u.data[k] = a * anchors_(label, k) + b * jitter.data[k];
    return u;
  }

  Array project(const Array& w, const Array& u, Rng noise,
                std::vector<std::size_t> shape, const Array& key_map,
                Rng key_stream) const {
    Array x = matmul_eval(w, u.reshaped({spec_.latent_dim, 1}));
    if (spec_.pair_key_scale > 0) {
      // Unit-norm-in-expectation key, so pair_key_scale is the per-pixel
      // magnitude of the key channel on the same footing as noise_sigma.
      Array key = key_stream.normals(
          {spec_.pair_key_dim}, 1.0 / std::sqrt(double(spec_.pair_key_dim)));
      Array contrib =
          matmul_eval(key_map, key.reshaped({spec_.pair_key_dim, 1}));
      for (std::size_t i = 0; i < x.numel(); ++i)
        x.data[i] += spec_.pair_key_scale * contrib.data[i];
    }
    if (spec_.noise_sigma > 0) {
      Array eps = noise.normals({x.numel()}, spec_.noise_sigma);
      for (std::size_t i = 0; i < x.numel(); ++i) x.data[i] += eps.data[i];
    }
    return x.reshaped(std::move(shape));
  }

  // Gram-Schmidt on keyed gaussian rows; re-draws on near-degeneracy.
  static Array orthonormal_rows(Rng stream, std::size_t n, std::size_t d) {
    Array rows = Array::zeros({n, d});
    std::size_t attempt = 0;
    for (std::size_t i = 0; i < n; ++i) {
      while (true) {
        Array cand = stream.fork(attempt++).normals({d});
        for (std::size_t j = 0; j < i; ++j) {
          double dot = 0.0;
          for (std::size_t k = 0; k < d; ++k) dot += cand.data[k] * rows(j, k);
          for (std::size_t k = 0; k < d; ++k) cand.data[k] -= dot * rows(j, k);
        }
        double norm = 0.0;
        for (double x : cand.data) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-6) {
          for (std::size_t k = 0; k < d; ++k) rows(i, k) = cand.data[k] / norm;
          break;
        }
      }
    }
    return rows;
  }

  SynthSpec spec_;
  Array anchors_, w_video_, w_audio_, key_video_, key_audio_;
};

// Marks one modality absent across the whole batch and zeroes its tensors so
// nothing can read through the flag by accident. Idempotent.
inline SynthBatch drop_modality(SynthBatch batch, Stream which) {
  require(which == Stream::video || which == Stream::audio,
          "drop_modality: only video or audio can be dropped");
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (which == Stream::video) {
      batch.video_present[i] = false;
      batch.video[i] = Array::zeros(batch.video[i].shape);
    } else {
      batch.audio_present[i] = false;
      batch.audio[i] = Array::zeros(batch.audio[i].shape);
    }
  }
  return batch;
}

}  // namespace zorro
