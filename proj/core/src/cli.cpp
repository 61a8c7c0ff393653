#include "asfp/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "CLI11.hpp"
#include "asfp/bench.hpp"
#include "asfp/checkpoint.hpp"
#include "asfp/flops.hpp"
#include "asfp/train.hpp"

namespace asfp {

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw format_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw format_error("write to " + path + " failed");
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  const TrainConfig config = load_train_config(config_path);
  std::filesystem::create_directories(out_dir);

  std::printf("epoch  loss      acc_before  acc_after  rate      pruned\n");
  const TrainResult result = train(config, [](const MetricsRow& r) {
    std::printf("%-6d %-9.4f %-11.2f %-10.2f %-9.4f %d\n", r.epoch, r.train_loss,
                r.acc_before, r.acc_after, r.rate, r.pruned_count);
    std::fflush(stdout);
  });

  write_file(out_dir + "/metrics.csv", metrics_csv(result.metrics));
  write_file(out_dir + "/mask.json", mask_to_json(result.mask));
  save_checkpoint(result.model, result.mask.empty() ? nullptr : &result.mask,
                  out_dir + "/model.ckpt");
  save_checkpoint(result.compact, nullptr, out_dir + "/compact.ckpt");

  const FlopsReport flops = count_flops(result.model, result.compact);
  std::printf("final compact accuracy: %.2f%%\n", result.test_accuracy);
  std::printf("MACs pruned: %.1f%%\n", 100.0 * flops.pruned_ratio);
  std::printf("wrote metrics.csv, mask.json, model.ckpt, compact.ckpt to %s\n",
              out_dir.c_str());
  return 0;
}

int cmd_extract(const std::string& ckpt_path, const std::string& mask_path,
                const std::string& out_path) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt_path);
  const MaskState mask = load_mask_file(mask_path);
  for (const auto& [layer, indices] : mask.layers)
    zeroize_filters(loaded.model, layer, indices);
  const Model<float> compact = extract_compact(loaded.model, mask);
  save_checkpoint(compact, nullptr, out_path);
  const FlopsReport flops = count_flops(loaded.model, compact);
  std::printf("extracted compact model: %.1f%% of MACs pruned\n",
              100.0 * flops.pruned_ratio);
  return 0;
}

int cmd_flops(const std::string& arch_path, const std::string& mask_path, bool as_json) {
  const ArchSpec arch = load_arch_file(arch_path);
  Model<float> model = build_model<float>(arch, 0);
  FlopsReport report;
  if (!mask_path.empty()) {
    Model<float> masked = model;
    const MaskState mask = load_mask_file(mask_path);
    for (const auto& [layer, indices] : mask.layers)
      zeroize_filters(masked, layer, indices);
    report = count_flops(model, extract_compact(masked, mask));
  } else {
    report = count_flops(model);
  }
  std::fputs((as_json ? flops_to_json(report) + "\n" : flops_to_text(report)).c_str(),
             stdout);
  if (!mask_path.empty()) std::printf("pruned ratio: %.1f%%\n", 100.0 * report.pruned_ratio);
  return 0;
}

int cmd_bench(const std::string& ckpt_path, const std::string& mask_path, int batch,
              int reps, int warmup, bool as_json) {
  LoadedCheckpoint loaded = load_checkpoint(ckpt_path);

  MaskState mask;
  if (!mask_path.empty()) {
    mask = load_mask_file(mask_path);
  } else if (loaded.mask) {
    mask = *loaded.mask;
  }

  if (mask.empty()) {
    const TimingStats t = bench_forward(loaded.model, batch, reps, warmup, 7);
    std::printf("forward: median %.3f ms (min %.3f, max %.3f) over %d reps, batch %d\n",
                t.median_ms, t.min_ms, t.max_ms, t.reps, t.batch);
    return 0;
  }

  for (const auto& [layer, indices] : mask.layers)
    zeroize_filters(loaded.model, layer, indices);
  const Model<float> compact = extract_compact(loaded.model, mask);
  const SpeedupReport r = bench_speedup(loaded.model, compact, batch, reps, warmup, 7);
  std::fputs((as_json ? speedup_to_json(r) + "\n" : speedup_to_text(r)).c_str(), stdout);
  return 0;
}

int cmd_gradcheck() {
  const std::vector<GradSuiteEntry> entries = run_gradient_suite();
  bool ok = true;
  for (const auto& e : entries) {
    const bool pass = e.max_rel_err < e.threshold;
    ok = ok && pass;
    std::printf("%-22s max rel err %.3e (threshold %.0e) %s\n", e.name.c_str(),
                e.max_rel_err, e.threshold, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 2;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Filter-pruning trainer and analysis tool for small CNNs"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".";
  CLI::App* train_cmd = app.add_subcommand("train", "Train (and optionally prune) a model");
  train_cmd->add_option("--config", config_path, "Training config JSON")->required();
  train_cmd->add_option("--out", out_dir, "Output directory");

  std::string ckpt_path, mask_path, out_path;
  CLI::App* extract_cmd =
      app.add_subcommand("extract", "Extract the compact model from a checkpoint + mask");
  extract_cmd->add_option("--checkpoint", ckpt_path, "Checkpoint path")->required();
  extract_cmd->add_option("--mask", mask_path, "Mask JSON path")->required();
  extract_cmd->add_option("--out", out_path, "Output checkpoint path")->required();

  std::string arch_path, flops_mask;
  bool flops_json = false;
  CLI::App* flops_cmd = app.add_subcommand("flops", "Count MACs for an architecture");
  flops_cmd->add_option("--arch", arch_path, "Architecture JSON path")->required();
  flops_cmd->add_option("--mask", flops_mask, "Optional mask JSON path");
  flops_cmd->add_flag("--json", flops_json, "Emit JSON instead of a table");

  std::string bench_ckpt, bench_mask;
  int batch = 16, reps = 10, warmup = 2;
  bool bench_json = false;
  CLI::App* bench_cmd = app.add_subcommand("bench", "Measure forward wall time");
  bench_cmd->add_option("--checkpoint", bench_ckpt, "Checkpoint path")->required();
  bench_cmd->add_option("--mask", bench_mask, "Optional mask JSON path");
  bench_cmd->add_option("--batch", batch, "Batch size");
  bench_cmd->add_option("--reps", reps, "Timed repetitions");
  bench_cmd->add_option("--warmup", warmup, "Warmup repetitions");
  bench_cmd->add_flag("--json", bench_json, "Emit JSON instead of text");

  CLI::App* grad_cmd =
      app.add_subcommand("gradcheck", "Verify layer backwards against finite differences");
  (void)grad_cmd;

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints usage to stderr
    return 1;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(config_path, out_dir);
    if (extract_cmd->parsed()) return cmd_extract(ckpt_path, mask_path, out_path);
    if (flops_cmd->parsed()) return cmd_flops(arch_path, flops_mask, flops_json);
    if (bench_cmd->parsed())
      return cmd_bench(bench_ckpt, bench_mask, batch, reps, warmup, bench_json);
    return cmd_gradcheck();
  } catch (const error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}

}  // namespace asfp
