#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tsgnn/error.hpp"
#include "tsgnn/experiment.hpp"

namespace fs = std::filesystem;
using namespace tsgnn;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;

std::vector<TrainMode> modes_from_flag(const std::string& flag, const ExperimentConfig& config) {
  if (flag.empty()) return config.modes;
  if (flag == "all") return {TrainMode::original, TrainMode::two_stage, TrainMode::two_stage_plus};
  return {parse_train_mode(flag)};
}

fs::path resolve_out(const std::string& flag, const ExperimentConfig* config) {
  if (!flag.empty()) return flag;
  if (config && !config->output_dir.empty()) return config->output_dir;
  throw ConfigError("out: no output directory (pass --out or set output_dir in the config)");
}

int cmd_ingest(const std::string& config_path, const std::string& out) {
  const ExperimentConfig config = load_experiment_config(config_path);
  const GraphDataset ds = load_dataset_source(config.dataset);
  const DatasetStats s = dataset_stats(ds, config.dataset.kind);
  std::printf("dataset      %s\n", s.name.c_str());
  std::printf("graphs       %zu\n", s.graphs);
  std::printf("classes      %zu\n", s.classes);
  std::printf("avg nodes    %.2f\n", s.mean_nodes);
  std::printf("avg edges    %.2f\n", s.mean_edges);
  if (!out.empty() || !config.output_dir.empty()) {
    const fs::path dir = resolve_out(out, &config);
    fs::create_directories(dir);
    save_dataset(ds, dir / "dataset.cache");
    std::printf("cache        %s\n", (dir / "dataset.cache").string().c_str());
  }
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out, const std::string& mode, std::size_t jobs,
              std::optional<std::size_t> stop_after) {
  const ExperimentConfig config = load_experiment_config(config_path);
  RunOptions options;
  options.out_dir = resolve_out(out, &config);
  options.modes = modes_from_flag(mode, config);
  options.jobs = jobs;
  options.stop_after = stop_after;
  const RunStats stats = run_experiment(config, options, std::cerr);
  std::printf("trials: %zu planned, %zu skipped, %zu run%s\n", stats.planned, stats.skipped, stats.completed,
              stats.interrupted ? " (stopped early)" : "");
  return kExitOk;
}

int cmd_report(const std::string& config_path, const std::string& out) {
  std::optional<ExperimentConfig> config;
  if (!config_path.empty()) config = load_experiment_config(config_path);
  const fs::path dir = resolve_out(out, config ? &*config : nullptr);
  const Report report = build_report(dir);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  if (report.complete.empty()) {
    std::cerr << "error: no setting in " << dir.string() << " has all " << kSplitsPerSetting << " runs\n";
    return kExitUsage;
  }
  std::cout << report.table;
  std::cout << "artifacts written to " << (dir / "report").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage metric-learning GNN experiments"};
  app.set_version_flag("--version", std::string(version_string()));
  app.require_subcommand(1);

  std::string config_path, out, mode;
  std::size_t jobs = 1;
  std::size_t stop_after = 0;

  auto* ingest = app.add_subcommand("ingest", "Load a dataset, print statistics and write a cache");
  ingest->add_option("--config", config_path, "Experiment config file")->required();
  ingest->add_option("--out", out, "Directory for dataset.cache");

  auto* train = app.add_subcommand("train", "Run the grid x seeds trials, resuming finished ones");
  train->add_option("--config", config_path, "Experiment config file")->required();
  train->add_option("--out", out, "Output directory");
  train->add_option("--mode", mode, "original, 2stg, 2stg+ or all (default: modes in the config)")
      ->check(CLI::IsMember({"original", "2stg", "2stg+", "all"}));
  train->add_option("--jobs", jobs, "Trials run in parallel")->check(CLI::PositiveNumber);
  train->add_option("--stop-after", stop_after, "Stop after this many new trials")->group("");

  auto* report = app.add_subcommand("report", "Summarise a trained output directory");
  report->add_option("--config", config_path, "Experiment config file (for its output_dir)");
  report->add_option("--out", out, "Output directory");
  report->add_option("--mode", mode, "Accepted for symmetry; all modes are reported")
      ->check(CLI::IsMember({"original", "2stg", "2stg+", "all"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*ingest) return cmd_ingest(config_path, out);
    if (*train) {
      return cmd_train(config_path, out, mode, jobs,
                       train->count("--stop-after") ? std::optional<std::size_t>(stop_after) : std::nullopt);
    }
    if (*report) return cmd_report(config_path, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}
