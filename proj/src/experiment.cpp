#include "tsgnn/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "tsgnn/error.hpp"
#include "tsgnn/json_io.hpp"

#ifndef TSGNN_VERSION
#define TSGNN_VERSION "unknown"
#endif

namespace tsgnn {

using nlohmann::json;
namespace fs = std::filesystem;

const char* version_string() { return TSGNN_VERSION; }

namespace {

// Typed field access with ConfigError messages naming the JSON path.
template <typename T>
T field(const json& obj, const std::string& key, const std::string& where) {
  const std::string path = where.empty() ? key : where + "." + key;
  if (!obj.contains(key)) throw ConfigError(path + ": required field is missing");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + ": wrong type");
  }
}

template <typename T>
T field_or(const json& obj, const std::string& key, const std::string& where, T fallback) {
  return obj.contains(key) ? field<T>(obj, key, where) : fallback;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError((where.empty() ? "config" : where) + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError((where.empty() ? key : where + "." + key) + ": unknown field");
    }
  }
}

template <typename T>
std::vector<T> grid_values(const json& grid, const char* key, std::vector<T> fallback) {
  if (!grid.contains(key)) return fallback;
  auto values = field<std::vector<T>>(grid, key, "grid");
  if (values.empty()) throw ConfigError(std::string("grid.") + key + ": must list at least one value");
  return values;
}

bool is_power_of_two(std::size_t v) { return v != 0 && (v & (v - 1)) == 0; }

DatasetSource parse_source(const json& doc, const fs::path& base_dir) {
  DatasetSource s;
  s.descriptor = doc;
  const auto kind = field<std::string>(doc, "kind", "dataset");
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  if (kind == "tudataset") {
    reject_unknown(doc, {"kind", "path", "name"}, "dataset");
    s.kind = SourceKind::tudataset;
    s.path = resolve(field<std::string>(doc, "path", "dataset"));
    s.name = field_or<std::string>(doc, "name", "dataset", s.path.filename().string());
  } else if (kind == "taxi") {
    reject_unknown(doc, {"kind", "path", "zone_count", "name"}, "dataset");
    s.kind = SourceKind::taxi;
    s.path = resolve(field<std::string>(doc, "path", "dataset"));
    s.zone_count = field<std::size_t>(doc, "zone_count", "dataset");
    if (s.zone_count == 0) throw ConfigError("dataset.zone_count: must be positive");
    s.name = field_or<std::string>(doc, "name", "dataset", "taxi");
  } else if (kind == "synthetic") {
    reject_unknown(doc, {"kind", "num_graphs", "seed", "name"}, "dataset");
    s.kind = SourceKind::synthetic;
    s.num_graphs = field_or<std::size_t>(doc, "num_graphs", "dataset", 200);
    if (s.num_graphs < 10) throw ConfigError("dataset.num_graphs: need at least 10 graphs for a split");
    s.seed = field_or<std::uint64_t>(doc, "seed", "dataset", 0);
    s.name = field_or<std::string>(doc, "name", "dataset", "clique-path");
  } else if (kind == "cache") {
    reject_unknown(doc, {"kind", "path"}, "dataset");
    s.kind = SourceKind::cache;
    s.path = resolve(field<std::string>(doc, "path", "dataset"));
  } else {
    throw ConfigError("dataset.kind: unknown value '" + kind + "' (expected tudataset, taxi, synthetic or cache)");
  }
  return s;
}

void validate_grid(const HyperGrid& g) {
  for (double m : g.margin) {
    if (std::none_of(kMarginChoices.begin(), kMarginChoices.end(), [&](double a) { return std::abs(a - m) < 1e-12; })) {
      throw ConfigError("grid.margin: " + std::to_string(m) + " is not one of 0.5, 1.0, 1.5, 2.0, 2.5");
    }
  }
  auto dims = [](const std::vector<std::size_t>& values, const char* name) {
    for (std::size_t v : values) {
      if (std::find(kDimChoices.begin(), kDimChoices.end(), v) == kDimChoices.end()) {
        throw ConfigError(std::string("grid.") + name + ": " + std::to_string(v) + " is not one of 16, 32, 64, 96, 128");
      }
    }
  };
  dims(g.input_dim, "input_dim");
  dims(g.hidden_dim, "hidden_dim");
  dims(g.output_dim, "output_dim");
  for (std::size_t v : g.num_layers)
    if (v < 1) throw ConfigError("grid.num_layers: must be at least 1");
  for (std::size_t v : g.classifier_layers)
    if (v < 1 || v > 3) throw ConfigError("grid.classifier_layers: " + std::to_string(v) + " is not 1, 2 or 3");
  const std::size_t smallest_output = *std::min_element(g.output_dim.begin(), g.output_dim.end());
  for (std::size_t v : g.classifier_hidden) {
    if (!is_power_of_two(v) || v < 2 || v > smallest_output) {
      throw ConfigError("grid.classifier_hidden: " + std::to_string(v) +
                        " must be a power of two between 2 and the output_dim " + std::to_string(smallest_output));
    }
  }
}

}  // namespace

void to_json(json& j, const TrainConfig& c) {
  j = json{{"mode", to_string(c.mode)},
           {"margin", c.margin},
           {"lr", c.lr},
           {"stage1_max_epochs", c.stage1_max_epochs},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"seed", c.seed},
           {"model", c.model},
           {"classifier", c.classifier}};
}

void from_json(const json& j, TrainConfig& c) {
  c.mode = parse_train_mode(j.at("mode").get<std::string>());
  c.margin = j.at("margin").get<double>();
  c.lr = j.at("lr").get<double>();
  c.stage1_max_epochs = j.at("stage1_max_epochs").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.model = j.at("model").get<ModelConfig>();
  c.classifier = j.at("classifier").get<ClassifierConfig>();
}

ExperimentConfig parse_experiment_config(const json& doc, const fs::path& base_dir) {
  reject_unknown(doc, {"format_version", "dataset", "architecture", "modes", "grid", "seeds", "training", "output_dir"},
                 "");
  const int version = field<int>(doc, "format_version", "");
  if (version != kExperimentConfigVersion) {
    throw ConfigError("format_version: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kExperimentConfigVersion) + ")");
  }
  ExperimentConfig c;
  c.snapshot = doc;
  c.dataset = parse_source(field<json>(doc, "dataset", ""), base_dir);
  c.architecture = parse_architecture(field<std::string>(doc, "architecture", ""));

  if (doc.contains("modes")) {
    c.modes.clear();
    for (const auto& m : field<std::vector<std::string>>(doc, "modes", "")) {
      try {
        c.modes.push_back(parse_train_mode(m));
      } catch (const ConfigError&) {
        throw ConfigError("modes: unknown mode '" + m + "'");
      }
    }
    if (c.modes.empty()) throw ConfigError("modes: must list at least one mode");
  }

  if (doc.contains("seeds")) {
    c.seeds = field<std::vector<std::uint64_t>>(doc, "seeds", "");
    if (c.seeds.empty()) throw ConfigError("seeds: must list at least one seed");
    if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
      throw ConfigError("seeds: duplicate seed");
    }
  }

  if (doc.contains("grid")) {
    const json& g = doc.at("grid");
    reject_unknown(g, {"margin", "num_layers", "input_dim", "hidden_dim", "output_dim", "global_pool",
                       "classifier_layers", "classifier_hidden"},
                   "grid");
    c.grid.margin = grid_values(g, "margin", c.grid.margin);
    c.grid.num_layers = grid_values(g, "num_layers", c.grid.num_layers);
    c.grid.input_dim = grid_values(g, "input_dim", c.grid.input_dim);
    c.grid.hidden_dim = grid_values(g, "hidden_dim", c.grid.hidden_dim);
    c.grid.output_dim = grid_values(g, "output_dim", c.grid.output_dim);
    if (g.contains("global_pool")) {
      c.grid.global_pool.clear();
      for (const auto& p : grid_values<std::string>(g, "global_pool", {})) {
        try {
          c.grid.global_pool.push_back(parse_pool_mode(p));
        } catch (const ConfigError&) {
          throw ConfigError("grid.global_pool: unknown value '" + p + "'");
        }
      }
    }
    c.grid.classifier_layers = grid_values(g, "classifier_layers", c.grid.classifier_layers);
    c.grid.classifier_hidden = grid_values(g, "classifier_hidden", c.grid.classifier_hidden);
  }
  validate_grid(c.grid);

  if (doc.contains("training")) {
    const json& t = doc.at("training");
    reject_unknown(t, {"lr", "stage1_max_epochs", "max_epochs", "patience"}, "training");
    c.training.lr = field_or(t, "lr", "training", c.training.lr);
    c.training.stage1_max_epochs = field_or(t, "stage1_max_epochs", "training", c.training.stage1_max_epochs);
    c.training.max_epochs = field_or(t, "max_epochs", "training", c.training.max_epochs);
    c.training.patience = field_or(t, "patience", "training", c.training.patience);
  }
  if (!std::isfinite(c.training.lr) || c.training.lr <= 0.0) throw ConfigError("training.lr: must be positive");
  if (c.training.stage1_max_epochs == 0 || c.training.max_epochs == 0) {
    throw ConfigError("training.max_epochs: must be at least 1");
  }
  if (c.training.patience >= std::min(c.training.stage1_max_epochs, c.training.max_epochs)) {
    throw ConfigError("training.patience: must be smaller than both epoch limits");
  }

  if (doc.contains("output_dir")) {
    const fs::path out = field<std::string>(doc, "output_dir", "");
    c.output_dir = out.is_absolute() ? out : base_dir / out;
  }

  for (auto mode : c.modes)
    for (const auto& t : expand_grid(c, mode)) t.validate();
  return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config file not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
  return parse_experiment_config(doc, path.parent_path());
}

GraphDataset load_dataset_source(const DatasetSource& source) {
  switch (source.kind) {
    case SourceKind::tudataset:
      if (!fs::is_directory(source.path)) throw IoError("dataset directory not found: " + source.path.string());
      return parse_tudataset(source.path, source.name);
    case SourceKind::taxi: {
      if (!fs::exists(source.path)) throw IoError("trip file not found: " + source.path.string());
      const auto trips = read_trip_csv(source.path);
      return build_taxi_dataset(trips, source.zone_count, source.name);
    }
    case SourceKind::synthetic: {
      GraphDataset ds = make_clique_path_dataset(source.num_graphs, source.seed);
      ds.name = source.name;
      return ds;
    }
    case SourceKind::cache:
      if (!fs::exists(source.path)) throw IoError("dataset cache not found: " + source.path.string());
      return load_dataset(source.path);
  }
  throw ConfigError("dataset.kind: unsupported");
}

DatasetStats dataset_stats(const GraphDataset& dataset, SourceKind kind) {
  DatasetStats s;
  s.name = dataset.name;
  s.graphs = dataset.graphs.size();
  s.classes = dataset.num_classes;
  s.mean_nodes = dataset.mean_nodes();
  s.mean_edges = kind == SourceKind::taxi ? dataset.mean_edges() : dataset.mean_edges() / 2.0;
  return s;
}

std::vector<TrainConfig> expand_grid(const ExperimentConfig& config, TrainMode mode) {
  const HyperGrid& g = config.grid;
  const std::vector<double> margins = mode == TrainMode::original ? std::vector<double>{g.margin.front()} : g.margin;
  std::vector<TrainConfig> out;
  for (double margin : margins)
    for (std::size_t layers : g.num_layers)
      for (std::size_t in : g.input_dim)
        for (std::size_t hid : g.hidden_dim)
          for (std::size_t outd : g.output_dim)
            for (PoolMode pool : g.global_pool)
              for (std::size_t cl : g.classifier_layers)
                for (std::size_t ch : g.classifier_hidden) {
                  TrainConfig t;
                  t.mode = mode;
                  t.margin = margin;
                  t.lr = config.training.lr;
                  t.stage1_max_epochs = config.training.stage1_max_epochs;
                  t.max_epochs = config.training.max_epochs;
                  t.patience = config.training.patience;
                  t.model.architecture = config.architecture;
                  t.model.num_layers = layers;
                  t.model.input_dim = in;
                  t.model.hidden_dim = hid;
                  t.model.output_dim = outd;
                  t.model.global_pool = pool;
                  t.classifier.num_layers = cl;
                  t.classifier.hidden_dim = ch;
                  out.push_back(t);
                }
  return out;
}

std::string trial_id(const ExperimentConfig& config, const TrainConfig& trial) {
  const std::string text = json{{"dataset", config.dataset.descriptor}, {"trial", trial}}.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json trial_record(const std::string& id, std::size_t config_index, const TrialResult& r, const std::string& checkpoint,
                  double wall_seconds) {
  json emb{{"rows", r.val_embeddings.values.rows()},
           {"cols", r.val_embeddings.values.cols()},
           {"labels", r.val_embeddings.labels}};
  json values = json::array();
  for (Eigen::Index i = 0; i < r.val_embeddings.values.rows(); ++i)
    for (Eigen::Index j = 0; j < r.val_embeddings.values.cols(); ++j) values.push_back(r.val_embeddings.values(i, j));
  emb["values"] = std::move(values);
  return json{{"trial_id", id},
              {"mode", to_string(r.config.mode)},
              {"config_index", config_index},
              {"seed", r.config.seed},
              {"config", r.config},
              {"stage1",
               {{"train_loss", r.stage1_train_loss},
                {"val_loss", r.stage1_val_loss},
                {"best_epoch", r.stage1_best_epoch}}},
              {"initial_train_loss", r.initial_train_loss},
              {"train_loss", r.train_loss},
              {"val_accuracy", r.val_accuracy},
              {"best_epoch", r.best_epoch},
              {"best_val_accuracy", r.best_val_accuracy},
              {"test_accuracy", r.test_accuracy},
              {"correlation_trace", r.correlation_trace},
              {"val_embeddings", std::move(emb)},
              {"checkpoint", checkpoint},
              {"timing", {{"wall_seconds", wall_seconds}}}};
}

namespace {

std::map<std::string, json> read_trial_log(const fs::path& path, std::ostream& log) {
  std::map<std::string, json> records;
  std::ifstream in(path);
  if (!in) return records;
  std::size_t line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (line.empty()) continue;
    try {
      json rec = json::parse(line);
      auto id = rec.at("trial_id").get<std::string>();
      records[id] = std::move(rec);
    } catch (const json::exception&) {
      log << "warning: " << path.string() << ":" << line_no << ": dropping unreadable trial record\n";
    }
  }
  return records;
}

void write_atomically(const fs::path& path, const std::string& contents) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct PlannedTrial {
  std::string id;
  std::size_t config_index = 0;
  TrainConfig config;
};

}  // namespace

RunStats run_experiment(const ExperimentConfig& config, const RunOptions& options, std::ostream& log) {
  if (options.out_dir.empty()) throw ConfigError("out: no output directory given");
  if (options.jobs == 0) throw ConfigError("jobs: must be at least 1");
  const fs::path ckpt_dir = options.out_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  const fs::path log_path = options.out_dir / "trials.jsonl";

  const GraphDataset dataset = load_dataset_source(config.dataset);
  const std::vector<TrainMode> modes = options.modes.empty() ? config.modes : options.modes;

  std::vector<PlannedTrial> planned;
  for (TrainMode mode : modes) {
    const auto grid = expand_grid(config, mode);
    for (std::size_t i = 0; i < grid.size(); ++i) {
      for (std::uint64_t seed : config.seeds) {
        TrainConfig t = grid[i];
        t.seed = seed;
        planned.push_back({trial_id(config, t), i, t});
      }
    }
  }

  std::map<std::string, json> records = read_trial_log(log_path, log);
  RunStats stats;
  stats.planned = planned.size();
  std::vector<const PlannedTrial*> pending;
  for (const auto& p : planned) {
    const auto it = records.find(p.id);
    if (it != records.end() && fs::exists(options.out_dir / it->second.value("checkpoint", std::string{}))) {
      ++stats.skipped;
    } else {
      records.erase(p.id);
      pending.push_back(&p);
    }
  }
  log << "planned " << stats.planned << " trials, " << stats.skipped << " already complete\n";

  std::mutex sink;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  {
    std::ofstream append(log_path, std::ios::app);
    if (!append) throw IoError("cannot open " + log_path.string());
    auto worker = [&] {
      while (!stop) {
        const std::size_t k = next++;
        if (k >= pending.size()) return;
        const PlannedTrial& p = *pending[k];
        try {
          const auto t0 = std::chrono::steady_clock::now();
          TrialResult result = run_trial(dataset, p.config);
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          const std::string ckpt = "checkpoints/" + p.id + ".json";
          save_checkpoint(options.out_dir / (ckpt + ".tmp"), *result.model, &*result.head);
          fs::rename(options.out_dir / (ckpt + ".tmp"), options.out_dir / ckpt);
          json rec = trial_record(p.id, p.config_index, result, ckpt, secs);
          rec["dataset"] = dataset.name;

          std::lock_guard lock(sink);
          append << rec.dump() << '\n';
          append.flush();
          records[p.id] = std::move(rec);
          ++stats.completed;
          log << "trial " << p.id << " " << to_string(p.config.mode) << " config " << p.config_index << " seed "
              << p.config.seed << ": val " << result.best_val_accuracy << " test " << result.test_accuracy << "\n";
          if (options.stop_after && stats.completed >= *options.stop_after) stop = true;
        } catch (...) {
          std::lock_guard lock(sink);
          if (!failure) failure = std::current_exception();
          stop = true;
        }
      }
    };
    std::vector<std::thread> threads;
    const std::size_t n = std::min(options.jobs, std::max<std::size_t>(1, pending.size()));
    for (std::size_t i = 1; i < n; ++i) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  stats.interrupted = stats.skipped + stats.completed < stats.planned;

  // Canonical log order: planned order, then records from other plans by id.
  std::ostringstream canonical;
  std::set<std::string> written;
  json trials = json::array();
  std::vector<json> current;
  for (const auto& p : planned) {
    const auto it = records.find(p.id);
    if (it == records.end()) continue;
    canonical << it->second.dump() << '\n';
    written.insert(p.id);
    current.push_back(it->second);
    trials.push_back({{"trial_id", p.id},
                      {"mode", to_string(p.config.mode)},
                      {"config_index", p.config_index},
                      {"seed", p.config.seed},
                      {"checkpoint", it->second.at("checkpoint")}});
  }
  for (const auto& [id, rec] : records)
    if (!written.count(id)) canonical << rec.dump() << '\n';
  write_atomically(log_path, canonical.str());

  json manifest{{"format", "tsgnn-manifest"},
                {"version", 1},
                {"code_version", version_string()},
                {"config", config.snapshot},
                {"trial_log", "trials.jsonl"},
                {"trials", std::move(trials)},
                {"complete", !stats.interrupted},
                {"summary", summary_to_json(summarize_records(current))},
                {"created_at", utc_timestamp()}};
  write_atomically(options.out_dir / "manifest.json", manifest.dump(2) + "\n");
  if (stats.interrupted) log << "stopped after " << stats.completed << " new trials\n";
  return stats;
}

}  // namespace tsgnn
