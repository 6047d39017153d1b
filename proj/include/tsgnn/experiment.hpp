#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "tsgnn/analysis.hpp"
#include "tsgnn/graph.hpp"
#include "tsgnn/models.hpp"
#include "tsgnn/training.hpp"

namespace tsgnn {

const char* version_string();

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

inline constexpr int kExperimentConfigVersion = 1;

enum class SourceKind { tudataset, taxi, synthetic, cache };

struct DatasetSource {
  SourceKind kind = SourceKind::synthetic;
  std::filesystem::path path;  // resolved against the config file's directory
  std::string name;
  std::size_t zone_count = 0;  // taxi
  std::size_t num_graphs = 200;  // synthetic
  std::uint64_t seed = 0;        // synthetic
  nlohmann::json descriptor;     // the section as written, part of trial identity
};

struct HyperGrid {
  std::vector<double> margin{1.0};
  std::vector<std::size_t> num_layers{2};
  std::vector<std::size_t> input_dim{32};
  std::vector<std::size_t> hidden_dim{32};
  std::vector<std::size_t> output_dim{32};
  std::vector<PoolMode> global_pool{PoolMode::mean};
  std::vector<std::size_t> classifier_layers{2};
  std::vector<std::size_t> classifier_hidden{16};
};

struct TrainingSettings {
  double lr = 1e-3;
  std::size_t stage1_max_epochs = 200;
  std::size_t max_epochs = 100;
  std::size_t patience = 20;
};

struct ExperimentConfig {
  DatasetSource dataset;
  Architecture architecture = Architecture::graphsage;
  std::vector<TrainMode> modes{TrainMode::original, TrainMode::two_stage, TrainMode::two_stage_plus};
  HyperGrid grid;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  TrainingSettings training;
  std::filesystem::path output_dir;  // empty when not given
  nlohmann::json snapshot;           // the document as loaded
};

// Validates every field; ConfigError messages start with the field path,
// e.g. "grid.margin: ...".
ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

GraphDataset load_dataset_source(const DatasetSource& source);

struct DatasetStats {
  std::string name;
  std::size_t graphs = 0;
  std::size_t classes = 0;
  double mean_nodes = 0.0;
  double mean_edges = 0.0;  // undirected for symmetric sources, trips for taxi
};
DatasetStats dataset_stats(const GraphDataset& dataset, SourceKind kind);

// Grid points for one mode in a fixed order. Margin plays no part in the
// original setting, so only the first listed margin is used there.
std::vector<TrainConfig> expand_grid(const ExperimentConfig& config, TrainMode mode);

// Stable hex digest of (dataset descriptor, training config, mode, seed).
std::string trial_id(const ExperimentConfig& config, const TrainConfig& trial);

nlohmann::json trial_record(const std::string& id, std::size_t config_index, const TrialResult& result,
                            const std::string& checkpoint, double wall_seconds);

struct RunOptions {
  std::filesystem::path out_dir;
  std::vector<TrainMode> modes;
  std::size_t jobs = 1;
  std::optional<std::size_t> stop_after;  // stop once this many new trials finished
};

struct RunStats {
  std::size_t planned = 0;
  std::size_t skipped = 0;  // already present in the trial log
  std::size_t completed = 0;
  bool interrupted = false;
};

// Runs (or resumes) every planned trial into out_dir: trials.jsonl,
// checkpoints/<id>.json and manifest.json.
RunStats run_experiment(const ExperimentConfig& config, const RunOptions& options, std::ostream& log);

struct SettingRow {
  std::string dataset;
  std::string architecture;
  std::string mode;
  SearchSummary summary;
  double intrinsic_dimension = 0.0;
  double avg_abs_correlation = 0.0;
};

// One row per mode, selected config by mean validation accuracy.
std::vector<SettingRow> summarize_records(const std::vector<nlohmann::json>& records);
nlohmann::json summary_to_json(const std::vector<SettingRow>& rows);

std::string format_accuracy(const RunSummary& s);

struct Report {
  std::vector<SettingRow> complete;
  std::vector<SettingRow> partial;
  std::vector<std::string> warnings;
  std::string table;
};

// Reads manifest and trial log from out_dir, recomputes the summary, writes
// report.json and per-mode CSVs under out_dir/report/.
Report build_report(const std::filesystem::path& out_dir);

}  // namespace tsgnn
