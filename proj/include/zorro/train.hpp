// Pretraining, checkpoint/resume, and linear probing on top of the masked
// multimodal models. Everything here is deterministic: batches are keyed by
// step index, parameter init is keyed by name, and the optimizer state is
// checkpointed in full, so a resumed run reproduces an uninterrupted run
// bit for bit.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "hip.hpp"
#include "objectives.hpp"
#include "optim.hpp"
#include "swin.hpp"
#include "synth.hpp"
#include "vit.hpp"

namespace zorro {

// ---------------------------------------------------------------------------
// AnyModel: one façade over the three backbones, built from a RunConfig.
// ---------------------------------------------------------------------------

class AnyModel {
 public:
  explicit AnyModel(const RunConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    switch (cfg_.arch) {
      case Arch::vit:
        vit_ = std::make_unique<ZorroViT>(cfg_.vit_config(), cfg_.seed);
        break;
      case Arch::swin:
        swin_ = std::make_unique<ZorroSwin>(cfg_.swin_config(), cfg_.seed);
        break;
      case Arch::hip:
        hip_ = std::make_unique<ZorroHip>(cfg_.hip_config(), cfg_.seed);
        break;
    }
  }

  const RunConfig& config() const { return cfg_; }

  bool has_fusion_outputs() const {
    return cfg_.mask.kind != MaskKind::two_streams;
  }

  ParamStore& params() {
    if (vit_) return vit_->params();
    if (swin_) return swin_->params();
    return hip_->params();
  }

  Ctx make_ctx(Tape& tape, bool trainable = true) {
    if (vit_) return vit_->make_ctx(tape, trainable);
    if (swin_) return swin_->make_ctx(tape, trainable);
    return hip_->make_ctx(tape, trainable);
  }

  ZorroVars forward(Ctx& c, Var video, Var audio) const {
    if (vit_) return vit_->forward(c, video, audio);
    if (swin_) return swin_->forward(c, video, audio);
    return hip_->forward(c, video, audio);
  }

  ZorroOutputs forward_eval(const Array& video, const Array& audio) {
    if (vit_) return vit_->forward_eval(video, audio);
    if (swin_) return swin_->forward_eval(video, audio);
    return hip_->forward_eval(video, audio);
  }

  // Per-layer self-attention masks; null for the latent-compression model,
  // which routes through grouped cross-attention instead.
  std::vector<AttentionMask>* self_masks() {
    if (vit_) return &vit_->self_masks();
    if (swin_) return &swin_->self_masks();
    return nullptr;
  }

  AttentionMask& decoder_mask() {
    if (vit_) return vit_->decoder_mask();
    if (swin_) return swin_->decoder_mask();
    return hip_->decoder_mask();
  }

 private:
  RunConfig cfg_;
  std::unique_ptr<ZorroViT> vit_;
  std::unique_ptr<ZorroSwin> swin_;
  std::unique_ptr<ZorroHip> hip_;
};

// ---------------------------------------------------------------------------
// Batched forward and training losses.
// ---------------------------------------------------------------------------

// Decoder outputs for a whole batch, one row per sample.
struct BatchHeads {
  Var o_v, o_a, o_f, o_g;
  bool has_fusion = false;
};

inline BatchHeads forward_batch(Ctx& c, const AnyModel& model,
                                const SynthBatch& batch) {
  require(batch.size() > 0, "forward_batch: empty batch");
  std::vector<Var> v_rows, a_rows, f_rows, g_rows;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Var vi = c.tape.leaf(batch.video[i], false);
    Var ai = c.tape.leaf(batch.audio[i], false);
    ZorroVars z = model.forward(c, vi, ai);
    v_rows.push_back(z.o_v);
    a_rows.push_back(z.o_a);
    if (z.has_fusion_outputs) {
      f_rows.push_back(z.o_f);
      g_rows.push_back(z.o_g);
    }
  }
  BatchHeads h;
  h.o_v = concat_rows(v_rows);
  h.o_a = concat_rows(a_rows);
  h.has_fusion = !f_rows.empty();
  if (h.has_fusion) {
    h.o_f = concat_rows(f_rows);
    h.o_g = concat_rows(g_rows);
  }
  return h;
}

namespace detail {

inline bool all_true(const std::vector<bool>& v) {
  for (bool b : v)
    if (!b) return false;
  return true;
}

inline Array one_hot_rows(const std::vector<std::size_t>& labels,
                          std::size_t n_classes) {
  Array t = Array::zeros({labels.size(), n_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] < n_classes, "one_hot: label ", labels[i],
            " out of range for ", n_classes, " classes");
    t(i, labels[i]) = 1.0;
  }
  return t;
}

}  // namespace detail

// The pretraining loss for one batch. The contrastive objective needs both
// modalities; the supervised objectives put a classifier head on each
// decoder output and skip every head that reads an absent modality (the
// fusion heads read both, so they are skipped unless both are present).
inline Var pretrain_loss(Ctx& c, const AnyModel& model, const SynthBatch& batch,
                         const RunConfig& cfg) {
  const bool video_ok = detail::all_true(batch.video_present);
  const bool audio_ok = detail::all_true(batch.audio_present);
  BatchHeads h = forward_batch(c, model, batch);

  if (cfg.objective == Objective::contrastive) {
    require(video_ok && audio_ok,
            "pretrain: the contrastive objective needs both modalities in "
            "every batch");
    ContrastiveConfig cc;
    cc.tau = cfg.tau;
    cc.include_fusion_terms = cfg.include_fusion_terms;
    cc.symmetrize = cfg.symmetrize;
    Var za = projector(c, h.o_a, cfg.projector_hidden, cfg.embedding_dim,
                       "proj.audio");
    Var zv = projector(c, h.o_v, cfg.projector_hidden, cfg.embedding_dim,
                       "proj.video");
    if (cc.include_fusion_terms) {
      require(h.has_fusion,
              "pretrain: fusion contrastive terms need fusion outputs");
      Var zf = projector(c, h.o_f, cfg.projector_hidden, cfg.embedding_dim,
                         "proj.fusion");
      return fusion_nce_loss(za, zv, zf, cc);
    }
    return nce_loss(za, zv, cc);
  }

  // Supervised heads: name -> (logits, needs_video, needs_audio).
  struct Head {
    std::string name;
    Var rows;
    bool needs_video, needs_audio;
  };
  std::vector<Head> heads{{"o_v", h.o_v, true, false},
                          {"o_a", h.o_a, false, true}};
  if (h.has_fusion) {
    heads.push_back({"o_f", h.o_f, true, true});
    heads.push_back({"o_g", h.o_g, true, true});
  }

  Var total;
  std::size_t used = 0;
  for (const Head& head : heads) {
    if ((head.needs_video && !video_ok) || (head.needs_audio && !audio_ok))
      continue;
    Var logits = linear(c, head.rows, cfg.n_classes, "head." + head.name);
    Var term = cfg.objective == Objective::supervised
                   ? cross_entropy_loss(logits, batch.labels)
                   : bce_with_logits_loss(
                         logits, detail::one_hot_rows(batch.labels,
                                                      cfg.n_classes));
    total = used == 0 ? term : add(total, term);
    ++used;
  }
  require(used > 0, "pretrain: no supervised head is trainable on a batch "
                    "with both modalities absent");
  return scale(total, 1.0 / static_cast<double>(used));
}

// Touches every parameter the training loss will ever touch, so that a
// freshly built model exposes the complete parameter set before a
// checkpoint restore. Uses a throwaway tape; values are name-keyed, so
// nothing depends on the dummy batch content.
inline void materialize_training_params(const RunConfig& cfg, AnyModel& model) {
  SynthGenerator gen(cfg.synth_spec());
  SynthBatch batch = gen.generate(std::max<std::size_t>(cfg.batch_size, 2), 0);
  Tape tape;
  Ctx c = model.make_ctx(tape);
  (void)pretrain_loss(c, model, batch, cfg);
}

// ---------------------------------------------------------------------------
// Optimizer selection and the deterministic train loop.
// ---------------------------------------------------------------------------

class TrainOptimizer {
 public:
  explicit TrainOptimizer(const RunConfig& cfg) : kind_(cfg.optimizer) {
    adam_.weight_decay = cfg.weight_decay;
    sgd_.weight_decay = cfg.weight_decay;
    sgd_.momentum = cfg.momentum;
  }

  void step(ParamStore& params, const std::map<std::string, Array>& grads,
            double lr) {
    if (kind_ == "adam") adam_.step(params, grads, lr);
    else sgd_.step(params, grads, lr);
  }

  std::map<std::string, Array> export_state() const {
    return kind_ == "adam" ? adam_.export_state() : sgd_.export_state();
  }

  void import_state(const std::map<std::string, Array>& st) {
    if (kind_ == "adam") adam_.import_state(st);
    else sgd_.import_state(st);
  }

 private:
  std::string kind_;
  Adam adam_;
  SgdMomentum sgd_;
};

inline CosineSchedule schedule_from(const RunConfig& cfg) {
  CosineSchedule s;
  s.lr_max = cfg.lr_max;
  s.lr_min = cfg.lr_min;
  s.warmup_steps = cfg.warmup_steps;
  s.total_steps = cfg.steps;
  return s;
}

struct TrainResult {
  std::vector<std::string> log_lines;
  double last_loss = 0.0;
  std::size_t steps_done = 0;
  bool diverged = false;
  std::size_t divergence_step = 0;
};

// Runs steps [start_step, cfg.steps). Batch s depends only on (seed, s), and
// a metric line is emitted for every step with s % log_every == 0 plus the
// final step, so two runs that pass through the same step agree exactly.
inline TrainResult train_loop(
    const RunConfig& cfg, AnyModel& model, TrainOptimizer& opt,
    std::size_t start_step,
    const std::function<void(const std::string&)>& on_line = {},
    const std::function<void(std::size_t)>& after_step = {}) {
  SynthGenerator gen(cfg.synth_spec());
  const CosineSchedule sched = schedule_from(cfg);
  TrainResult res;
  res.steps_done = start_step;
  for (std::size_t s = start_step; s < cfg.steps; ++s) {
    SynthBatch batch = gen.generate(cfg.batch_size, s);
    if (cfg.mixed_unimodal)
      batch = drop_modality(std::move(batch),
                            s % 2 == 0 ? Stream::audio : Stream::video);
    Tape tape;
    Ctx c = model.make_ctx(tape);
    Var loss = pretrain_loss(c, model, batch, cfg);
    const double lv = tape.val(loss).data[0];
    res.last_loss = lv;
    if (!std::isfinite(lv)) {
      res.diverged = true;
      res.divergence_step = s;
      return res;
    }
    const double lr = sched.at(s);
    tape.backward(loss);
    opt.step(model.params(), c.grads(), lr);
    res.steps_done = s + 1;
    if (s % cfg.log_every == 0 || s + 1 == cfg.steps) {
      std::string line = "step=" + std::to_string(s) +
                         " lr=" + format_double(lr) +
                         " loss=" + format_double(lv);
      if (on_line) on_line(line);
      res.log_lines.push_back(std::move(line));
    }
    if (after_step) after_step(s + 1);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoint plumbing.
// ---------------------------------------------------------------------------

inline std::string config_hash_hex(const RunConfig& cfg) {
  std::ostringstream ss;
  ss << "0x" << std::hex << std::setw(16) << std::setfill('0') << cfg.hash();
  return ss.str();
}

inline Checkpoint make_training_checkpoint(const RunConfig& cfg,
                                           AnyModel& model,
                                           const TrainOptimizer& opt,
                                           std::size_t completed_steps) {
  Checkpoint ck;
  ck.config_text = cfg.canonical_text();
  ck.arrays = model.params().all();
  for (auto& [name, value] : opt.export_state())
    ck.arrays[name] = std::move(value);
  ck.arrays["train.step"] =
      Array::scalar(static_cast<double>(completed_steps));
  return ck;
}

struct LoadedCheckpoint {
  RunConfig cfg;
  std::string config_text;
  std::map<std::string, Array> params, opt;
  std::size_t step = 0;
};

inline LoadedCheckpoint read_training_checkpoint(const std::string& path) {
  Checkpoint ck = load_checkpoint(path);
  LoadedCheckpoint out;
  out.config_text = ck.config_text;
  out.cfg = RunConfig::parse_text(ck.config_text);
  split_checkpoint_arrays(ck.arrays, out.params, out.opt);
  auto it = out.params.find("train.step");
  require(it != out.params.end(),
          "checkpoint: no train.step record; not a training checkpoint");
  out.step = static_cast<std::size_t>(it->second.data.at(0));
  out.params.erase(it);
  return out;
}

// ---------------------------------------------------------------------------
// run_pretrain: the full command — train, log metrics, write checkpoints.
// ---------------------------------------------------------------------------

struct PretrainResult {
  TrainResult train;
  std::vector<std::string> metric_lines;  // as written to metrics.log
  std::string metrics_path, checkpoint_path;
};

inline PretrainResult run_pretrain(const RunConfig& cfg,
                                   const std::string& out_dir,
                                   const std::string& resume_from = "",
                                   std::ostream* echo = nullptr) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  AnyModel model(cfg);
  materialize_training_params(cfg, model);
  TrainOptimizer opt(cfg);

  std::size_t start_step = 0;
  if (!resume_from.empty()) {
    LoadedCheckpoint lc = read_training_checkpoint(resume_from);
    require(lc.config_text == cfg.canonical_text(),
            "resume: checkpoint config (hash ", config_hash_hex(lc.cfg),
            ") differs from the requested config (hash ", config_hash_hex(cfg),
            "); resume needs the identical configuration");
    restore_params(model.params(), lc.params);
    opt.import_state(lc.opt);
    start_step = lc.step;
    require(start_step <= cfg.steps, "resume: checkpoint is at step ",
            start_step, " but the run has only ", cfg.steps, " steps");
  }

  PretrainResult res;
  res.metrics_path = (fs::path(out_dir) / "metrics.log").string();
  res.checkpoint_path = (fs::path(out_dir) / "final.ckpt").string();

  std::ofstream log(res.metrics_path);
  if (!log) fail("pretrain: cannot write ", res.metrics_path);
  auto emit = [&](const std::string& line) {
    res.metric_lines.push_back(line);
    log << line << '\n';
    log.flush();
    if (echo) *echo << line << '\n';
  };
  emit("config_hash=" + config_hash_hex(cfg));

  auto periodic = [&](std::size_t completed) {
    if (cfg.checkpoint_every == 0 || completed == cfg.steps) return;
    if (completed % cfg.checkpoint_every != 0) return;
    const std::string path =
        (fs::path(out_dir) / ("step_" + std::to_string(completed) + ".ckpt"))
            .string();
    const Checkpoint ck = make_training_checkpoint(cfg, model, opt, completed);
    save_checkpoint(path, ck.config_text, ck.arrays);
  };

  res.train = train_loop(cfg, model, opt, start_step, emit, periodic);
  if (!res.train.diverged) {
    const Checkpoint ck =
        make_training_checkpoint(cfg, model, opt, res.train.steps_done);
    save_checkpoint(res.checkpoint_path, ck.config_text, ck.arrays);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Linear probing.
// ---------------------------------------------------------------------------

namespace detail {

inline Array l2_normalize_rows_eval(const Array& x) {
  require(x.ndim() == 2, "normalize: need a 2-D feature table");
  Array out = x;
  const std::size_t n = x.shape[0], d = x.shape[1];
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += x(i, j) * x(i, j);
    const double norm = std::sqrt(sq);
    if (norm > 0.0)
      for (std::size_t j = 0; j < d; ++j) out(i, j) /= norm;
  }
  return out;
}

inline double accuracy_from_probs(const Array& probs,
                                  const std::vector<std::size_t>& labels) {
  require(probs.ndim() == 2 && probs.shape[0] == labels.size(),
          "accuracy: probs ", shape_str(probs), " vs ", labels.size(),
          " labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t jc = 1; jc < probs.shape[1]; ++jc)
      if (probs(i, jc) > probs(i, best)) best = jc;
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace detail

struct ProbeFit {
  double accuracy = 0.0;
  Array eval_probs;  // [n_eval x n_classes]
};

// Multinomial logistic regression on frozen features. Weights start at zero,
// so the fit is a deterministic descent on a convex objective; no RNG enters.
inline ProbeFit fit_linear_probe(const Array& train_x,
                                 const std::vector<std::size_t>& train_y,
                                 const Array& eval_x,
                                 const std::vector<std::size_t>& eval_y,
                                 std::size_t n_classes) {
  require(train_x.ndim() == 2 && eval_x.ndim() == 2 &&
              train_x.shape[1] == eval_x.shape[1],
          "probe: feature tables disagree in width");
  const std::size_t d = train_x.shape[1];
  ParamStore ps;
  Adam opt;
  opt.weight_decay = 1e-4;
  for (int step = 0; step < 300; ++step) {
    Tape tape;
    Ctx c(tape, ps, 0);
    Var x = tape.leaf(train_x, false);
    Var w = c.P("probe.w", {d, n_classes}, InitKind::zeros);
    Var b = c.P("probe.b", {n_classes}, InitKind::zeros);
    Var loss = cross_entropy_loss(add_rowvec(matmul(x, w), b), train_y);
    tape.backward(loss);
    opt.step(ps, c.grads(), 0.1);
  }
  Array logits = matmul_eval(eval_x, ps.at("probe.w"));
  const Array& b = ps.at("probe.b");
  for (std::size_t i = 0; i < logits.shape[0]; ++i)
    for (std::size_t jc = 0; jc < logits.shape[1]; ++jc)
      logits(i, jc) += b.data[jc];
  ProbeFit fit;
  fit.eval_probs = softmax_eval(logits);
  fit.accuracy = detail::accuracy_from_probs(fit.eval_probs, eval_y);
  return fit;
}

// Frozen-model features: one row of L2-normalized decoder output per sample,
// one table per available head.
struct HeadFeatures {
  std::vector<std::string> names;
  std::vector<Array> features;
  std::vector<std::size_t> labels;
};

inline HeadFeatures extract_head_features(AnyModel& model,
                                          const SynthSpec& spec,
                                          std::size_t n_samples,
                                          std::uint64_t batch_key) {
  SynthGenerator gen(spec);
  SynthBatch batch = gen.generate(n_samples, batch_key);
  HeadFeatures out;
  out.labels = batch.labels;
  out.names = {"o_v", "o_a"};
  const bool fusion = model.has_fusion_outputs();
  if (fusion) {
    out.names.push_back("o_f");
    out.names.push_back("o_g");
  }
  const std::size_t d = model.config().d_model;
  for (std::size_t h = 0; h < out.names.size(); ++h)
    out.features.push_back(Array::zeros({n_samples, d}));
  for (std::size_t i = 0; i < n_samples; ++i) {
    ZorroOutputs z = model.forward_eval(batch.video[i], batch.audio[i]);
    const Array* rows[4] = {&z.o_v, &z.o_a, nullptr, nullptr};
    if (fusion) {
      rows[2] = &*z.o_f;
      rows[3] = &*z.o_g;
    }
    for (std::size_t h = 0; h < out.names.size(); ++h)
      for (std::size_t j = 0; j < d; ++j)
        out.features[h](i, j) = rows[h]->data[j];
  }
  for (Array& f : out.features) f = detail::l2_normalize_rows_eval(f);
  return out;
}

// Batch keys reserved for probe data; training batches are keyed by step
// index, which stays far below these.
inline constexpr std::uint64_t kProbeTrainKey = 1'000'003;
inline constexpr std::uint64_t kProbeEvalKey = 2'000'003;

struct ProbeHeadResult {
  std::string name;
  double accuracy = 0.0;
};

struct ProbeReport {
  std::vector<ProbeHeadResult> heads;
  double averaged_accuracy = 0.0;
  double chance = 0.0;
  std::size_t n_train = 0, n_eval = 0;

  std::vector<std::string> lines() const {
    std::vector<std::string> out;
    for (const ProbeHeadResult& h : heads)
      out.push_back("head=" + h.name +
                    " accuracy=" + format_double(h.accuracy));
    out.push_back("head=averaged accuracy=" +
                  format_double(averaged_accuracy));
    out.push_back("chance=" + format_double(chance) +
                  " n_train=" + std::to_string(n_train) +
                  " n_eval=" + std::to_string(n_eval));
    return out;
  }
};

// Linear-probe evaluation of a checkpointed model: one logistic-regression
// head per decoder output plus an averaged-probabilities predictor. Probe
// data always uses coupled pairs (the label applies to both modalities), so
// the probe is meaningful even when the training distribution was not fully
// coupled. `only_head` restricts to a single named output; naming an output
// the masking does not produce is an error.
inline ProbeReport run_probe(const RunConfig& cfg, const std::string& ckpt_path,
                             const std::string& only_head = "",
                             std::size_t n_train = 1024,
                             std::size_t n_eval = 512) {
  cfg.validate();
  AnyModel model(cfg);
  materialize_training_params(cfg, model);
  LoadedCheckpoint lc = read_training_checkpoint(ckpt_path);
  restore_params(model.params(), lc.params);

  SynthSpec spec = cfg.synth_spec();
  spec.coupling_rho = 1.0;
  HeadFeatures train = extract_head_features(model, spec, n_train,
                                             kProbeTrainKey);
  HeadFeatures eval = extract_head_features(model, spec, n_eval,
                                            kProbeEvalKey);

  if (!only_head.empty()) {
    bool known = false;
    for (const std::string& n : train.names) known = known || n == only_head;
    require(known, "probe: output ", only_head,
            " is not produced by this masking (available:",
            [&] {
              std::string s;
              for (const std::string& n : train.names) s += " " + n;
              return s;
            }(),
            ")");
  }

  ProbeReport rep;
  rep.chance = 1.0 / static_cast<double>(cfg.n_classes);
  rep.n_train = n_train;
  rep.n_eval = n_eval;
  Array prob_sum;
  std::size_t used = 0;
  for (std::size_t h = 0; h < train.names.size(); ++h) {
    if (!only_head.empty() && train.names[h] != only_head) continue;
    ProbeFit fit = fit_linear_probe(train.features[h], train.labels,
                                    eval.features[h], eval.labels,
                                    cfg.n_classes);
    rep.heads.push_back({train.names[h], fit.accuracy});
    if (used == 0) prob_sum = fit.eval_probs;
    else
      for (std::size_t i = 0; i < prob_sum.numel(); ++i)
        prob_sum.data[i] += fit.eval_probs.data[i];
    ++used;
  }
  for (double& v : prob_sum.data) v /= static_cast<double>(used);
  rep.averaged_accuracy = detail::accuracy_from_probs(prob_sum, eval.labels);
  return rep;
}

// Projected contrastive embeddings (audio, video) for one batch, evaluated
// without gradients; used by retrieval and alignment diagnostics.
inline std::pair<Array, Array> projected_pair_embeddings(
    AnyModel& model, const RunConfig& cfg, const SynthBatch& batch) {
  Tape tape;
  Ctx c = model.make_ctx(tape, /*trainable=*/false);
  BatchHeads h = forward_batch(c, model, batch);
  Var za = projector(c, h.o_a, cfg.projector_hidden, cfg.embedding_dim,
                     "proj.audio");
  Var zv = projector(c, h.o_v, cfg.projector_hidden, cfg.embedding_dim,
                     "proj.video");
  return {tape.val(za), tape.val(zv)};
}

}  // namespace zorro
