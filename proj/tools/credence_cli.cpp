#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "credence/pipeline.hpp"

using namespace credence;

namespace {

// Config file, then --set overrides, then dedicated flags; validated last.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;

  PipelineConfig resolve() const {
    PipelineConfig cfg = config_path.empty()
                             ? PipelineConfig{}
                             : parse_pipeline_config(config_path);
    for (const auto& entry : sets) apply_config_entry(cfg, entry);
    if (seed) {
      cfg.seed = *seed;
      cfg.seed_set = true;
    }
    if (out_dir) cfg.out_dir = *out_dir;
    cfg.validate();
    return cfg;
  }
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.config_path,
                  "Pipeline config file (key = value lines)");
  cmd->add_option("--set", args.sets,
                  "Override a config entry, e.g. --set encoder.preset=tiny");
  cmd->add_option_function<std::uint64_t>(
      "--seed", [&args](std::uint64_t v) { args.seed = v; },
      "Seed for every random draw");
  cmd->add_option_function<std::string>(
      "--out", [&args](const std::string& v) { args.out_dir = v; },
      "Output directory");
}

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", fraction * 100.0);
  return buf;
}

void print_metrics(const Metrics& m) {
  std::cout << "accuracy  " << percent(m.accuracy) << "\n"
            << "precision " << percent(m.precision) << "\n"
            << "recall    " << percent(m.recall) << "\n"
            << "f1        " << percent(m.f1) << "\n"
            << "averaging " << averaging_name(m.averaging) << "\n";
}

int run_stage_command(const ConfigArgs& args, Stage through,
                      bool persist_head) {
  const PipelineConfig cfg = args.resolve();
  const PipelineResult res = run_pipeline(cfg, through, persist_head);

  switch (through) {
    case Stage::ingest: {
      std::cout << "dataset " << res.manifest.name << ": "
                << res.manifest.total << " records\n";
      for (const auto& [label, count] : res.manifest.label_counts)
        std::cout << "  " << label << ": " << count << "\n";
      std::cout << "canonical copy: " << res.canonical_path << "\n";
      break;
    }
    case Stage::split:
      std::cout << "split (seed " << cfg.seed << "): train "
                << res.split_sizes[0] << ", val " << res.split_sizes[1]
                << ", test " << res.split_sizes[2] << "\n"
                << "manifest: " << res.split_path << "\n";
      break;
    case Stage::finetune: {
      if (res.finetune_reused) {
        std::cout << "finetuned checkpoint up to date, skipped\n";
      } else {
        for (const auto& e : res.finetune_result.log)
          std::cout << "epoch " << e.epoch << ": train loss " << e.train_loss
                    << ", train acc " << e.train_acc << ", val loss "
                    << e.val_loss << ", val acc " << e.val_acc << "\n";
        std::cout << "best epoch " << res.finetune_result.best_epoch
                  << " (val acc " << res.finetune_result.best_val_acc << ")\n";
      }
      std::cout << "checkpoints: " << res.init_checkpoint << ", "
                << res.finetuned_checkpoint << "\n";
      break;
    }
    case Stage::encode:
      std::cout << (res.encode_reused ? "vector cache up to date, skipped\n"
                                      : "encoded dataset\n")
                << "cache: " << res.cache_path << "\n";
      break;
    case Stage::train_head: {
      if (res.head_loaded) {
        std::cout << "head checkpoint up to date, skipped\n";
      } else {
        const auto& r = res.head_result;
        for (const auto& w : r.warnings) std::cout << "warning: " << w << "\n";
        std::cout << "epochs run " << r.log.size() << " (best " << r.best_epoch
                  << ", val loss " << r.best_val_loss << ", val acc "
                  << r.best_val_acc << ")"
                  << (r.stopped_early ? ", stopped early" : "") << "\n";
      }
      std::cout << "head checkpoint: " << res.head_checkpoint << "\n";
      break;
    }
    case Stage::eval:
      print_metrics(res.test_metrics);
      break;
    case Stage::report:
      print_metrics(res.test_metrics);
      std::cout << "reports: " << res.csv_report << ", " << res.md_report
                << ", " << res.grid_path << "\n";
      break;
  }
  return 0;
}

int run_benchmark_cli(const ConfigArgs& args) {
  const PipelineConfig cfg = args.resolve();
  const BenchmarkArtifacts artifacts = run_benchmark_command(cfg);
  std::cout << render_report(artifacts.grid, "markdown") << "\n"
            << "reports: " << artifacts.csv_report << ", "
            << artifacts.md_report << ", " << artifacts.grid_path << "\n";
  return 0;
}

int run_report_cli(const std::string& grid_path, const std::string& format,
                   const std::string& out_file) {
  const BenchmarkGrid grid = load_grid(grid_path);
  const std::string text = render_report(grid, format);
  if (out_file.empty()) {
    std::cout << text;
  } else {
    std::ofstream out(out_file, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw std::runtime_error("report: cannot write " + out_file);
    std::cout << "wrote " << out_file << "\n";
  }
  return 0;
}

int run_verify_cli(const std::string& path) {
  const CheckpointSummary summary = verify_checkpoint(path);
  std::cout << "kind: " << summary.kind << "\n";
  for (const auto& entry : summary.entries)
    std::cout << "  " << entry.name << "  " << shape_to_string(entry.shape)
              << "  " << entry.count << "\n";
  std::cout << "parameters: " << summary.total_params << "\n";
  char fp[32];
  std::snprintf(fp, sizeof(fp), "%016llx",
                static_cast<unsigned long long>(summary.fingerprint));
  std::cout << "fingerprint: " << fp << "\nOK\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"credence: misinformation detection benchmark toolkit"};
  app.require_subcommand(0, 1);

  ConfigArgs args;
  Stage stage = Stage::report;
  bool persist_head = false;

  auto* ingest = app.add_subcommand("ingest", "Load a dataset and write its canonical copy");
  auto* split_cmd = app.add_subcommand("split", "Write the stratified train/val/test assignment");
  auto* finetune_cmd = app.add_subcommand("finetune", "Train the encoder and write its checkpoints");
  auto* encode_cmd = app.add_subcommand("encode", "Write the sentence-vector cache");
  auto* train_head_cmd = app.add_subcommand("train-head", "Train the classifier head on cached vectors");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate the head on the test split");
  auto* run_cmd = app.add_subcommand("run", "Full pipeline: ingest through report");
  for (auto* cmd : {ingest, split_cmd, finetune_cmd, encode_cmd,
                    train_head_cmd, eval_cmd, run_cmd})
    add_config_options(cmd, args);
  ingest->callback([&] { stage = Stage::ingest; });
  split_cmd->callback([&] { stage = Stage::split; });
  finetune_cmd->callback([&] { stage = Stage::finetune; });
  encode_cmd->callback([&] { stage = Stage::encode; });
  train_head_cmd->callback([&] {
    stage = Stage::train_head;
    persist_head = true;
  });
  eval_cmd->callback([&] { stage = Stage::eval; });
  run_cmd->callback([&] { stage = Stage::report; });

  auto* benchmark_cmd = app.add_subcommand(
      "benchmark", "Run the preset x head grid and write reports");
  add_config_options(benchmark_cmd, args);

  auto* report_cmd =
      app.add_subcommand("report", "Render a saved benchmark grid");
  std::string grid_path, report_format = "markdown", report_out;
  report_cmd->add_option("--grid", grid_path, "Path to grid.jsonl")->required();
  report_cmd->add_option("--format", report_format, "csv or markdown");
  report_cmd->add_option("--out-file", report_out,
                         "Write here instead of stdout");

  auto* verify_cmd =
      app.add_subcommand("verify", "Validate a checkpoint file");
  std::string verify_path;
  verify_cmd->add_option("path", verify_path, "Checkpoint to inspect")
      ->required();

  CLI11_PARSE(app, argc, argv);
  if (app.get_subcommands().empty()) {
    std::puts(app.help().c_str());
    return 0;
  }

  try {
    if (*benchmark_cmd) return run_benchmark_cli(args);
    if (*report_cmd) return run_report_cli(grid_path, report_format, report_out);
    if (*verify_cmd) return run_verify_cli(verify_path);
    return run_stage_command(args, stage, persist_head);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
