// Command-line harness around the library: synthetic-stream pretraining,
// linear probing of saved checkpoints, the self-verification suite, and mask
// export for inspection. Every run prints the resolved config hash so logs
// can be matched to configurations, and any error exits nonzero with a
// message naming the offending input.
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include <zorro/zorro.hpp>

namespace {

zorro::RunConfig load_config(const std::string& path, std::int64_t seed) {
  zorro::RunConfig cfg = zorro::RunConfig::parse_file(path);
  if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
  cfg.validate();
  return cfg;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) zorro::fail("cannot open ", path.string(), " for writing");
  out << text;
}

int cmd_pretrain(const std::string& config_path, std::int64_t seed,
                 const std::string& out_dir, const std::string& resume) {
  const zorro::RunConfig cfg = load_config(config_path, seed);
  const zorro::PretrainResult res =
      zorro::run_pretrain(cfg, out_dir, resume, &std::cout);
  if (res.train.diverged) {
    std::cerr << "pretrain: loss became non-finite at step "
              << res.train.divergence_step << "; no final checkpoint written\n";
    return 1;
  }
  std::cout << "metrics: " << res.metrics_path << "\n"
            << "checkpoint: " << res.checkpoint_path << "\n";
  return 0;
}

int cmd_probe(const std::string& config_path, std::int64_t seed,
              const std::string& out_dir, const std::string& ckpt,
              const std::string& head) {
  const zorro::RunConfig cfg = load_config(config_path, seed);
  std::cout << "config_hash=" << zorro::config_hash_hex(cfg) << "\n";
  const zorro::ProbeReport rep = zorro::run_probe(cfg, ckpt, head);
  std::string text;
  for (const std::string& line : rep.lines()) {
    std::cout << line << "\n";
    text += line + "\n";
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const auto path = std::filesystem::path(out_dir) / "probe.txt";
    write_text(path, text);
    std::cout << "report: " << path.string() << "\n";
  }
  return 0;
}

int cmd_verify(std::int64_t seed, const std::string& out_dir,
               bool skip_collapse) {
  zorro::VerifyOptions opt;
  if (seed >= 0) opt.seed = static_cast<std::uint64_t>(seed);
  opt.run_collapse = !skip_collapse;
  opt.collapse.seed = opt.seed + 10;
  opt.progress = &std::cout;
  const zorro::VerifyReport rep = zorro::run_verification(opt);
  const std::string text = rep.to_text();
  std::cout << text;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    const auto path = std::filesystem::path(out_dir) / "verify_report.txt";
    write_text(path, text);
    std::cout << "report: " << path.string() << "\n";
  }
  if (!rep.all_pass()) {
    std::cerr << "verify: " << rep.failures() << " of " << rep.checks.size()
              << " checks failed\n";
    return 1;
  }
  std::cout << "verify: all " << rep.checks.size() << " checks passed\n";
  return 0;
}

int cmd_dump_masks(const std::string& config_path, std::int64_t seed,
                   const std::string& out_dir) {
  const zorro::RunConfig cfg = load_config(config_path, seed);
  std::cout << "config_hash=" << zorro::config_hash_hex(cfg) << "\n";
  zorro::AnyModel model(cfg);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  if (const auto* masks = model.self_masks()) {
    for (std::size_t l = 0; l < masks->size(); ++l) {
      const auto path = dir / ("layer" + std::to_string(l) + ".mask.txt");
      write_text(path, (*masks)[l].to_text());
      std::cout << "wrote " << path.string() << "\n";
    }
    write_text(dir / "reachability.txt",
               zorro::AttentionMask{zorro::reachability(*masks)}.to_text());
    std::cout << "wrote " << (dir / "reachability.txt").string() << "\n";
  } else {
    std::cout << "note: this architecture attends within local groups; only "
                 "the decoder mask is a single token-level matrix\n";
  }
  write_text(dir / "decoder.mask.txt", model.decoder_mask().to_text());
  std::cout << "wrote " << (dir / "decoder.mask.txt").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masked multimodal transformer harness"};
  app.require_subcommand(1);

  std::string config_path, out_dir, resume, ckpt, head;
  std::int64_t seed = -1;  // negative: keep the seed from the config file
  bool skip_collapse = false;

  CLI::App* pre = app.add_subcommand(
      "pretrain", "train on synthetic paired streams and save a checkpoint");
  pre->add_option("--config", config_path, "run configuration file")
      ->required();
  pre->add_option("--seed", seed, "override the seed from the config");
  pre->add_option("--out", out_dir, "output directory")->required();
  pre->add_option("--resume", resume, "checkpoint to continue from");

  CLI::App* prb = app.add_subcommand(
      "probe", "fit linear probes on a saved checkpoint's outputs");
  prb->add_option("--config", config_path, "run configuration file")
      ->required();
  prb->add_option("--seed", seed, "override the seed from the config");
  prb->add_option("--out", out_dir, "directory for the probe report");
  prb->add_option("--ckpt", ckpt, "checkpoint to probe")->required();
  prb->add_option("--head", head,
                  "probe a single output head (o_v, o_a, o_f, o_g)");

  CLI::App* ver = app.add_subcommand(
      "verify", "run the self-checking suite; nonzero exit on any failure");
  ver->add_option("--seed", seed, "seed for the randomized checks");
  ver->add_option("--out", out_dir, "directory for the verification report");
  ver->add_flag("--skip-collapse", skip_collapse,
                "skip the training-based collapse experiment");

  CLI::App* dmp = app.add_subcommand(
      "dump-masks", "write attention masks as 0/1 text matrices");
  dmp->add_option("--config", config_path, "run configuration file")
      ->required();
  dmp->add_option("--seed", seed, "override the seed from the config");
  dmp->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) return cmd_pretrain(config_path, seed, out_dir, resume);
    if (prb->parsed()) return cmd_probe(config_path, seed, out_dir, ckpt, head);
    if (ver->parsed()) return cmd_verify(seed, out_dir, skip_collapse);
    if (dmp->parsed()) return cmd_dump_masks(config_path, seed, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;  // unreachable: a subcommand is required
}
