// Training pipeline and verification machinery: deterministic pretraining,
// checkpoint resume that is indistinguishable from an uninterrupted run,
// linear-probe behavior, report serialization, and the isolation checker's
// ability to catch a corrupted mask.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "zorro/train.hpp"
#include "zorro/verify.hpp"

namespace fs = std::filesystem;
using namespace zorro;

namespace {

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "zorro_train_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small but non-trivial run: contrastive objective so the projector (and its
// batch normalization) is exercised, two blocks so masks compose.
RunConfig tiny_cfg() {
  RunConfig cfg;
  cfg.d_model = 16;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.steps = 12;
  cfg.batch_size = 4;
  cfg.log_every = 3;
  cfg.embedding_dim = 8;
  cfg.projector_hidden = 16;
  return cfg;
}

TEST(Pretrain, SameSeedIsBitIdentical) {
  const RunConfig cfg = tiny_cfg();
  const std::string d1 = fresh_dir("det1"), d2 = fresh_dir("det2");
  const PretrainResult a = run_pretrain(cfg, d1);
  const PretrainResult b = run_pretrain(cfg, d2);
  ASSERT_FALSE(a.train.diverged);
  EXPECT_EQ(a.metric_lines, b.metric_lines);
  EXPECT_EQ(read_bytes(a.metrics_path), read_bytes(b.metrics_path));
  EXPECT_EQ(read_bytes(a.checkpoint_path), read_bytes(b.checkpoint_path));
}

TEST(Pretrain, SeedChangesTheRun) {
  RunConfig cfg = tiny_cfg();
  const PretrainResult a = run_pretrain(cfg, fresh_dir("seed1"));
  cfg.seed += 1;
  const PretrainResult b = run_pretrain(cfg, fresh_dir("seed2"));
  EXPECT_NE(a.train.last_loss, b.train.last_loss);
}

TEST(Pretrain, ResumeMatchesUninterruptedRun) {
  RunConfig cfg = tiny_cfg();
  cfg.checkpoint_every = 6;
  const std::string full_dir = fresh_dir("full");
  const PretrainResult full = run_pretrain(cfg, full_dir);
  const std::string mid_ckpt = (fs::path(full_dir) / "step_6.ckpt").string();
  ASSERT_TRUE(fs::exists(mid_ckpt));

  const PretrainResult resumed =
      run_pretrain(cfg, fresh_dir("resumed"), mid_ckpt);

  // Every metric line the resumed run emits (past the config-hash header)
  // must appear verbatim as the tail of the uninterrupted run's log.
  ASSERT_GE(resumed.metric_lines.size(), 2u);
  EXPECT_EQ(resumed.metric_lines[0], full.metric_lines[0]);
  const std::vector<std::string> tail(
      full.metric_lines.end() -
          static_cast<std::ptrdiff_t>(resumed.metric_lines.size() - 1),
      full.metric_lines.end());
  const std::vector<std::string> resumed_body(resumed.metric_lines.begin() + 1,
                                              resumed.metric_lines.end());
  EXPECT_EQ(resumed_body, tail);

  // The final checkpoints are byte-for-byte identical.
  EXPECT_EQ(read_bytes(full.checkpoint_path),
            read_bytes(resumed.checkpoint_path));
}

TEST(Pretrain, ResumeRejectsMismatchedConfig) {
  RunConfig cfg = tiny_cfg();
  cfg.checkpoint_every = 6;
  const std::string dir = fresh_dir("mismatch");
  run_pretrain(cfg, dir);
  RunConfig other = cfg;
  other.tau = cfg.tau * 2.0;
  EXPECT_THROW(run_pretrain(other, fresh_dir("mismatch2"),
                            (fs::path(dir) / "step_6.ckpt").string()),
               std::invalid_argument);
}

TEST(Pretrain, CheckpointRecordsStepAndState) {
  const RunConfig cfg = tiny_cfg();
  AnyModel model(cfg);
  materialize_training_params(cfg, model);
  TrainOptimizer opt(cfg);
  const Checkpoint ck = make_training_checkpoint(cfg, model, opt, 7);
  const std::string path =
      (fs::path(fresh_dir("ckpt")) / "state.ckpt").string();
  save_checkpoint(path, ck.config_text, ck.arrays);

  const LoadedCheckpoint lc = read_training_checkpoint(path);
  EXPECT_EQ(lc.step, 7u);
  EXPECT_EQ(lc.config_text, cfg.canonical_text());
  EXPECT_EQ(lc.params.size(), model.params().all().size());
  EXPECT_FALSE(lc.opt.empty());
}

TEST(Probe, RejectsHeadsTheMaskingDoesNotProduce) {
  RunConfig cfg = tiny_cfg();
  cfg.mask.kind = MaskKind::two_streams;
  cfg.include_fusion_terms = false;
  cfg.steps = 2;
  const std::string dir = fresh_dir("probe_heads");
  const PretrainResult pr = run_pretrain(cfg, dir);

  EXPECT_THROW(run_probe(cfg, pr.checkpoint_path, "o_f", 16, 8),
               std::invalid_argument);

  const ProbeReport rep = run_probe(cfg, pr.checkpoint_path, "o_a", 16, 8);
  ASSERT_EQ(rep.heads.size(), 1u);
  EXPECT_EQ(rep.heads[0].name, "o_a");
  EXPECT_EQ(rep.averaged_accuracy, rep.heads[0].accuracy);
}

TEST(Probe, ReportsAllHeadsWithFusion) {
  RunConfig cfg = tiny_cfg();
  cfg.steps = 2;
  const PretrainResult pr = run_pretrain(cfg, fresh_dir("probe_all"));
  const ProbeReport rep = run_probe(cfg, pr.checkpoint_path, "", 16, 8);
  ASSERT_EQ(rep.heads.size(), 4u);
  EXPECT_EQ(rep.heads[0].name, "o_v");
  EXPECT_EQ(rep.heads[1].name, "o_a");
  EXPECT_EQ(rep.heads[2].name, "o_f");
  EXPECT_EQ(rep.heads[3].name, "o_g");
  EXPECT_EQ(rep.chance, 1.0 / static_cast<double>(cfg.n_classes));
  const std::vector<std::string> lines = rep.lines();
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0].rfind("head=o_v accuracy=", 0), 0u);
  EXPECT_EQ(lines[5].rfind("chance=", 0), 0u);
}

TEST(Probe, LinearProbeSeparatesSeparableFeatures) {
  // Four well-separated clusters: the probe must classify them perfectly.
  const std::size_t n_train = 64, n_eval = 32, d = 6, n_classes = 4;
  Rng rng(99);
  Array train_x = rng.normals({n_train, d}, 0.05);
  Array eval_x = rng.normals({n_eval, d}, 0.05);
  std::vector<std::size_t> train_y(n_train), eval_y(n_eval);
  for (std::size_t i = 0; i < n_train; ++i) {
    train_y[i] = i % n_classes;
    train_x(i, train_y[i]) += 2.0;
  }
  for (std::size_t i = 0; i < n_eval; ++i) {
    eval_y[i] = i % n_classes;
    eval_x(i, eval_y[i]) += 2.0;
  }
  const ProbeFit fit =
      fit_linear_probe(train_x, train_y, eval_x, eval_y, n_classes);
  EXPECT_EQ(fit.accuracy, 1.0);

  // Pure noise with the same labels cannot do much better than chance.
  Array noise_train = rng.normals({n_train, d});
  Array noise_eval = rng.normals({n_eval, d});
  const ProbeFit junk =
      fit_linear_probe(noise_train, train_y, noise_eval, eval_y, n_classes);
  EXPECT_LT(junk.accuracy, 0.55);
}

TEST(Probe, LinearProbeIsDeterministic) {
  Rng rng(5);
  Array x = rng.normals({24, 5});
  Array e = rng.normals({12, 5});
  std::vector<std::size_t> xy(24), ey(12);
  for (std::size_t i = 0; i < 24; ++i) xy[i] = i % 3;
  for (std::size_t i = 0; i < 12; ++i) ey[i] = i % 3;
  const ProbeFit a = fit_linear_probe(x, xy, e, ey, 3);
  const ProbeFit b = fit_linear_probe(x, xy, e, ey, 3);
  EXPECT_EQ(a.accuracy, b.accuracy);
  ASSERT_EQ(a.eval_probs.numel(), b.eval_probs.numel());
  for (std::size_t i = 0; i < a.eval_probs.numel(); ++i)
    EXPECT_EQ(a.eval_probs.data[i], b.eval_probs.data[i]);
}

TEST(VerifyReport, TextRoundTrip) {
  VerifyReport rep;
  CheckResult a;
  a.name = "isolation_values";
  a.config = "vit/zorro";
  a.pass = true;
  a.add("max_dv", 0.0);
  a.add("expected", "above_chance");
  rep.checks.push_back(a);
  CheckResult b;
  b.name = "collapse";
  b.config = "bottleneck";
  b.pass = false;
  b.add("probe", 0.8125);
  rep.checks.push_back(b);

  EXPECT_FALSE(rep.all_pass());
  EXPECT_EQ(rep.failures(), 1u);

  const std::string text = rep.to_text();
  const VerifyReport parsed = VerifyReport::parse_text(text);
  EXPECT_EQ(parsed.to_text(), text);
  EXPECT_EQ(parsed.failures(), 1u);
  ASSERT_EQ(parsed.checks.size(), 2u);
  EXPECT_EQ(parsed.checks[0].name, "isolation_values");
  EXPECT_TRUE(parsed.checks[0].pass);
  EXPECT_EQ(parsed.checks[1].config, "bottleneck");

  EXPECT_THROW(VerifyReport::parse_text("not a report line\n"),
               std::invalid_argument);
}

TEST(Verify, IsolationCheckerCatchesCorruptedMask) {
  AnyModel clean(toy_run_config(Arch::vit, MaskKind::zorro));
  const IsolationStats ok = check_isolation(clean, 3, 42);
  EXPECT_LE(ok.max_dv, 1e-12);
  EXPECT_LE(ok.max_da, 1e-12);

  AnyModel broken(toy_run_config(Arch::vit, MaskKind::zorro));
  std::vector<AttentionMask>* masks = broken.self_masks();
  ASSERT_NE(masks, nullptr);
  const StreamLayout layout{8, 4, 2};
  // One illegal edge: a video query allowed to read an audio key.
  (*masks)[0].m(layout.video_begin(), layout.audio_begin()) = 1.0;
  const IsolationStats bad = check_isolation(broken, 3, 42);
  EXPECT_GT(bad.max_dv, 0.0);
}

TEST(Verify, FastChecksAllPass) {
  VerifyOptions opt;
  opt.isolation_trials = 3;
  opt.run_collapse = false;
  const VerifyReport rep = run_verification(opt);
  EXPECT_TRUE(rep.all_pass()) << rep.to_text();
  EXPECT_GT(rep.checks.size(), 30u);
}

TEST(Pretrain, MixedUnimodalSupervisedRuns) {
  RunConfig cfg = tiny_cfg();
  cfg.objective = Objective::supervised;
  cfg.mixed_unimodal = true;
  cfg.steps = 4;
  const PretrainResult pr = run_pretrain(cfg, fresh_dir("mixed"));
  EXPECT_FALSE(pr.train.diverged);
  EXPECT_TRUE(std::isfinite(pr.train.last_loss));
}

}  // namespace
