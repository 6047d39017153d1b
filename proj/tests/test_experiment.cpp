#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "tsgnn/error.hpp"
#include "tsgnn/experiment.hpp"

using namespace tsgnn;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tsgnn_test_experiment_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json tiny_config() {
  return json{{"format_version", 1},
              {"dataset", {{"kind", "synthetic"}, {"num_graphs", 40}, {"seed", 3}}},
              {"architecture", "graphsage"},
              {"modes", {"2stg"}},
              {"grid", {{"input_dim", {16}}, {"hidden_dim", {16}}, {"output_dim", {16}}, {"classifier_hidden", {8}}}},
              {"seeds", {0, 1, 2, 3, 4}},
              {"training", {{"stage1_max_epochs", 6}, {"max_epochs", 5}, {"patience", 2}}}};
}

std::string config_error(const json& doc) {
  try {
    parse_experiment_config(doc, ".");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::vector<json> read_log(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

std::vector<json> without_timing(std::vector<json> records) {
  for (auto& r : records) r.erase("timing");
  return records;
}

std::size_t count_files(const fs::path& dir) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) n += e.is_regular_file();
  return n;
}

RunStats run(const json& doc, const fs::path& out, std::size_t jobs = 1, std::optional<std::size_t> stop = {}) {
  std::ostringstream log;
  RunOptions options;
  options.out_dir = out;
  options.jobs = jobs;
  options.stop_after = stop;
  return run_experiment(parse_experiment_config(doc, "."), options, log);
}

}  // namespace

TEST(ExperimentConfig, ParsesDefaultsAndResolvesPaths) {
  json doc = tiny_config();
  doc["dataset"] = {{"kind", "tudataset"}, {"path", "MUTAG"}};
  doc["output_dir"] = "runs/x";
  doc.erase("modes");
  const auto c = parse_experiment_config(doc, TSGNN_DATA_DIR);
  EXPECT_EQ(c.dataset.path, fs::path(TSGNN_DATA_DIR) / "MUTAG");
  EXPECT_EQ(c.dataset.name, "MUTAG");
  EXPECT_EQ(c.output_dir, fs::path(TSGNN_DATA_DIR) / "runs/x");
  EXPECT_EQ(c.modes.size(), 3u);
  EXPECT_EQ(c.seeds.size(), 5u);
}

TEST(ExperimentConfig, RejectionsNameTheField) {
  auto with = [](const std::string& section, const std::string& key, json value) {
    json doc = tiny_config();
    if (section.empty())
      doc[key] = std::move(value);
    else
      doc[section][key] = std::move(value);
    return doc;
  };
  EXPECT_EQ(config_error(with("grid", "margin", {0.7})).rfind("grid.margin:", 0), 0u);
  EXPECT_EQ(config_error(with("grid", "input_dim", {20})).rfind("grid.input_dim:", 0), 0u);
  EXPECT_EQ(config_error(with("grid", "output_dim", {48})).rfind("grid.output_dim:", 0), 0u);
  EXPECT_EQ(config_error(with("grid", "classifier_layers", {4})).rfind("grid.classifier_layers:", 0), 0u);
  EXPECT_EQ(config_error(with("grid", "classifier_hidden", {32})).rfind("grid.classifier_hidden:", 0), 0u);
  EXPECT_EQ(config_error(with("grid", "classifier_hidden", {6})).rfind("grid.classifier_hidden:", 0), 0u);
  EXPECT_EQ(config_error(with("grid", "global_pool", {"median"})).rfind("grid.global_pool:", 0), 0u);
  EXPECT_EQ(config_error(with("grid", "margin", json::array())).rfind("grid.margin:", 0), 0u);
  EXPECT_EQ(config_error(with("grid", "colour", {1})).rfind("grid.colour:", 0), 0u);
  EXPECT_EQ(config_error(with("", "seeds", json::array())).rfind("seeds:", 0), 0u);
  EXPECT_EQ(config_error(with("", "seeds", {1, 1})).rfind("seeds:", 0), 0u);
  EXPECT_EQ(config_error(with("", "modes", {"3stg"})).rfind("modes:", 0), 0u);
  EXPECT_EQ(config_error(with("", "format_version", 2)).rfind("format_version:", 0), 0u);
  EXPECT_EQ(config_error(with("", "architecture", "eigengcn")).empty(), false);
  EXPECT_EQ(config_error(with("training", "patience", 6)).rfind("training.patience:", 0), 0u);
  EXPECT_EQ(config_error(with("training", "lr", "fast")).rfind("training.lr:", 0), 0u);
  EXPECT_EQ(config_error(with("dataset", "kind", "csv")).rfind("dataset.kind:", 0), 0u);
  EXPECT_EQ(config_error(with("", "extra", 1)).rfind("extra:", 0), 0u);
  json missing = tiny_config();
  missing.erase("dataset");
  EXPECT_EQ(config_error(missing).rfind("dataset:", 0), 0u);
}

TEST(ExperimentConfig, InvalidGridFailsBeforeAnyTrial) {
  json doc = tiny_config();
  doc["grid"]["margin"] = {1.0, 3.0};
  const fs::path out = fresh_dir("invalid");
  EXPECT_THROW(run(doc, out), ConfigError);
  EXPECT_FALSE(fs::exists(out / "trials.jsonl"));
}

TEST(ExperimentConfig, LoadMissingFileIsIoError) {
  EXPECT_THROW(load_experiment_config("/nonexistent/config.json"), IoError);
  const fs::path dir = fresh_dir("badjson");
  std::ofstream(dir / "c.json") << "{ not json";
  EXPECT_THROW(load_experiment_config(dir / "c.json"), ConfigError);
}

TEST(ExpandGrid, CartesianProductInFixedOrder) {
  json doc = tiny_config();
  doc["grid"]["margin"] = {0.5, 2.0};
  doc["grid"]["num_layers"] = {1, 2, 3};
  doc["grid"]["classifier_layers"] = {1, 2};
  const auto c = parse_experiment_config(doc, ".");
  const auto two = expand_grid(c, TrainMode::two_stage);
  ASSERT_EQ(two.size(), 12u);
  EXPECT_EQ(two.front().margin, 0.5);
  EXPECT_EQ(two.back().margin, 2.0);
  EXPECT_EQ(two[0].classifier.num_layers, 1u);
  EXPECT_EQ(two[1].classifier.num_layers, 2u);
  EXPECT_EQ(two[2].model.num_layers, 2u);
  std::set<std::string> ids;
  for (const auto& t : two) ids.insert(trial_id(c, t));
  EXPECT_EQ(ids.size(), two.size());
  // Margin does not enter the original setting.
  EXPECT_EQ(expand_grid(c, TrainMode::original).size(), 6u);
}

TEST(TrialId, StableHexAndSensitiveToSeedModeAndData) {
  const auto c = parse_experiment_config(tiny_config(), ".");
  TrainConfig t = expand_grid(c, TrainMode::two_stage).front();
  const std::string id = trial_id(c, t);
  EXPECT_EQ(id.size(), 16u);
  EXPECT_EQ(id.find_first_not_of("0123456789abcdef"), std::string::npos);
  EXPECT_EQ(id, trial_id(parse_experiment_config(tiny_config(), "."), t));
  TrainConfig s = t;
  s.seed = 1;
  EXPECT_NE(trial_id(c, s), id);
  TrainConfig m = t;
  m.mode = TrainMode::two_stage_plus;
  EXPECT_NE(trial_id(c, m), id);
  json other = tiny_config();
  other["dataset"]["seed"] = 4;
  EXPECT_NE(trial_id(parse_experiment_config(other, "."), t), id);
}

TEST(TrainConfigJson, RoundTrips) {
  TrainConfig t;
  t.mode = TrainMode::two_stage_plus;
  t.margin = 2.5;
  t.seed = 17;
  t.model.architecture = Architecture::sagpool;
  EXPECT_EQ(json(t).get<TrainConfig>(), t);
}

TEST(Ingest, MutagStatistics) {
  json doc = tiny_config();
  doc["dataset"] = {{"kind", "tudataset"}, {"path", "MUTAG"}, {"name", "MUTAG"}};
  const auto c = parse_experiment_config(doc, TSGNN_DATA_DIR);
  const auto s = dataset_stats(load_dataset_source(c.dataset), c.dataset.kind);
  EXPECT_EQ(s.graphs, 188u);
  EXPECT_EQ(s.classes, 2u);
  EXPECT_NEAR(s.mean_nodes, 17.93, 0.01);
  EXPECT_NEAR(s.mean_edges, 19.79, 0.01);
}

TEST(Ingest, TwoDayTaxiGivesFortyEightGraphs) {
  const fs::path dir = fresh_dir("taxi");
  std::vector<TaxiTrip> trips;
  for (unsigned day : {15u, 16u})  // Thursday and Friday
    for (unsigned hour = 0; hour < 24; ++hour) trips.push_back({2026, 10, day, hour, 30, hour % 5, (hour + 1) % 5});
  write_trip_csv(dir / "trips.csv", trips);
  json doc = tiny_config();
  doc["dataset"] = {{"kind", "taxi"}, {"path", "trips.csv"}, {"zone_count", 5}};
  const auto c = parse_experiment_config(doc, dir);
  const GraphDataset ds = load_dataset_source(c.dataset);
  const auto s = dataset_stats(ds, c.dataset.kind);
  EXPECT_EQ(s.graphs, 48u);
  EXPECT_EQ(s.classes, 2u);
  EXPECT_DOUBLE_EQ(s.mean_edges, 1.0);
  EXPECT_EQ(ds.graphs.front().label(), 0u);
  EXPECT_EQ(ds.graphs.back().label(), 1u);
}

TEST(Ingest, MissingSourcesAreIoErrors) {
  json doc = tiny_config();
  doc["dataset"] = {{"kind", "tudataset"}, {"path", "/nonexistent/MUTAG"}};
  EXPECT_THROW(load_dataset_source(parse_experiment_config(doc, ".").dataset), IoError);
  doc["dataset"] = {{"kind", "cache"}, {"path", "/nonexistent/x.cache"}};
  EXPECT_THROW(load_dataset_source(parse_experiment_config(doc, ".").dataset), IoError);
}

TEST(RunExperiment, SingletonGridFiveSeedsThenIdempotentRerun) {
  const fs::path out = fresh_dir("singleton");
  const RunStats first = run(tiny_config(), out);
  EXPECT_EQ(first.planned, 5u);
  EXPECT_EQ(first.completed, 5u);
  EXPECT_FALSE(first.interrupted);
  const auto records = read_log(out / "trials.jsonl");
  ASSERT_EQ(records.size(), 5u);
  EXPECT_EQ(count_files(out / "checkpoints"), 5u);

  json manifest = json::parse(std::ifstream(out / "manifest.json"));
  EXPECT_EQ(manifest.at("code_version"), version_string());
  EXPECT_EQ(manifest.at("config"), tiny_config());
  EXPECT_TRUE(manifest.at("complete").get<bool>());
  ASSERT_EQ(manifest.at("trials").size(), 5u);
  for (const auto& ref : manifest.at("trials")) EXPECT_TRUE(fs::exists(out / ref.at("checkpoint").get<std::string>()));
  for (const auto& r : records) {
    EXPECT_GE(r.at("timing").at("wall_seconds").get<double>(), 0.0);
    EXPECT_EQ(r.at("mode"), "2stg");
  }

  const RunStats second = run(tiny_config(), out);
  EXPECT_EQ(second.skipped, 5u);
  EXPECT_EQ(second.completed, 0u);
  json again = json::parse(std::ifstream(out / "manifest.json"));
  manifest.erase("created_at");
  again.erase("created_at");
  EXPECT_EQ(manifest, again);
  EXPECT_EQ(read_log(out / "trials.jsonl"), records);
}

TEST(RunExperiment, ResumeAfterInterruptionMatchesUninterrupted) {
  const fs::path whole = fresh_dir("whole");
  const fs::path resumed = fresh_dir("resumed");
  run(tiny_config(), whole);

  const RunStats cut = run(tiny_config(), resumed, 1, 2);
  EXPECT_TRUE(cut.interrupted);
  EXPECT_EQ(cut.completed, 2u);
  EXPECT_FALSE(json::parse(std::ifstream(resumed / "manifest.json")).at("complete").get<bool>());
  const RunStats rest = run(tiny_config(), resumed);
  EXPECT_EQ(rest.skipped, 2u);
  EXPECT_EQ(rest.completed, 3u);
  EXPECT_EQ(without_timing(read_log(resumed / "trials.jsonl")), without_timing(read_log(whole / "trials.jsonl")));
  EXPECT_EQ(count_files(resumed / "checkpoints"), 5u);
}

TEST(RunExperiment, TornLogLineAndMissingCheckpointAreRerun) {
  const fs::path out = fresh_dir("torn");
  run(tiny_config(), out);
  const auto records = read_log(out / "trials.jsonl");
  {
    std::ofstream log(out / "trials.jsonl", std::ios::trunc);
    log << records[0].dump() << '\n' << records[1].dump().substr(0, 40) << '\n';
    for (std::size_t i = 2; i < records.size(); ++i) log << records[i].dump() << '\n';
  }
  fs::remove(out / records[3].at("checkpoint").get<std::string>());
  const RunStats stats = run(tiny_config(), out);
  EXPECT_EQ(stats.completed, 2u);
  EXPECT_EQ(without_timing(read_log(out / "trials.jsonl")), without_timing(records));
}

TEST(RunExperiment, ParallelJobsAreDeterministic) {
  const fs::path serial = fresh_dir("serial");
  const fs::path parallel = fresh_dir("parallel");
  json doc = tiny_config();
  doc["modes"] = {"original", "2stg+"};
  run(doc, serial, 1);
  run(doc, parallel, 3);
  EXPECT_EQ(without_timing(read_log(parallel / "trials.jsonl")), without_timing(read_log(serial / "trials.jsonl")));
}

TEST(Report, RecomputedSummaryMatchesManifestAndWritesArtifacts) {
  const fs::path out = fresh_dir("report");
  json doc = tiny_config();
  doc["modes"] = {"original", "2stg", "2stg+"};
  run(doc, out);
  const Report report = build_report(out);
  EXPECT_TRUE(report.warnings.empty());
  ASSERT_EQ(report.complete.size(), 3u);
  EXPECT_TRUE(report.partial.empty());
  const json manifest = json::parse(std::ifstream(out / "manifest.json"));
  EXPECT_EQ(summary_to_json(report.complete), manifest.at("summary"));
  for (const char* mode : {"original", "2stg", "2stg_plus"}) {
    for (const char* file : {"scatter.csv", "variance.csv", "correlation_trace.csv"})
      EXPECT_TRUE(fs::exists(out / "report" / mode / file)) << mode << "/" << file;
  }
  EXPECT_TRUE(fs::exists(out / "report" / "report.json"));
  EXPECT_NE(report.table.find("clique-path"), std::string::npos);
}

namespace {

// A hand-made trial record; the embeddings are a fixed 4 x 2 block.
json fake_record(const std::string& mode, std::uint64_t seed, double acc) {
  TrainConfig t;
  t.mode = parse_train_mode(mode);
  t.seed = seed;
  return json{{"trial_id", mode + std::to_string(seed)},
              {"mode", mode},
              {"config_index", 0},
              {"seed", seed},
              {"config", t},
              {"dataset", "toy"},
              {"best_val_accuracy", acc},
              {"test_accuracy", acc},
              {"correlation_trace", {0.5, 0.4}},
              {"val_embeddings", {{"rows", 4}, {"cols", 2}, {"labels", {0, 0, 1, 1}}, {"values", {0, 0, 1, 0, 0, 1, 1, 1.5}}}},
              {"checkpoint", "checkpoints/none.json"}};
}

void write_fake_run(const fs::path& out, const std::vector<json>& records) {
  json trials = json::array();
  std::ofstream log(out / "trials.jsonl");
  for (const auto& r : records) {
    log << r.dump() << '\n';
    trials.push_back({{"trial_id", r.at("trial_id")}, {"checkpoint", r.at("checkpoint")}});
  }
  fs::create_directories(out / "checkpoints");
  std::ofstream(out / "checkpoints" / "none.json") << "{}";
  json manifest{{"trials", trials}, {"summary", summary_to_json(summarize_records(records))}};
  std::ofstream(out / "manifest.json") << manifest.dump();
}

}  // namespace

TEST(Report, FiveRunsAtPointEightFormatAsExpected) {
  EXPECT_EQ(format_accuracy({0.8, 0.0}), "0.800 ± 0.000");
  EXPECT_EQ(format_accuracy({0.81234, 0.0456}), "0.812 ± 0.046");
  const fs::path out = fresh_dir("fake");
  std::vector<json> records;
  for (std::uint64_t s = 0; s < 5; ++s) records.push_back(fake_record("original", s, 0.8));
  write_fake_run(out, records);
  const Report report = build_report(out);
  ASSERT_EQ(report.complete.size(), 1u);
  EXPECT_NE(report.table.find("0.800 ± 0.000"), std::string::npos);
  EXPECT_TRUE(report.warnings.empty());
}

TEST(Report, IncompleteSettingIsPartialWithWarning) {
  const fs::path out = fresh_dir("partial");
  std::vector<json> records;
  for (std::uint64_t s = 0; s < 5; ++s) records.push_back(fake_record("original", s, 0.8));
  for (std::uint64_t s = 0; s < 4; ++s) records.push_back(fake_record("2stg", s, 0.9));
  write_fake_run(out, records);
  const Report report = build_report(out);
  ASSERT_EQ(report.complete.size(), 1u);
  ASSERT_EQ(report.partial.size(), 1u);
  EXPECT_EQ(report.partial.front().mode, "2stg");
  EXPECT_EQ(report.table.find("2stg"), std::string::npos);
  ASSERT_EQ(report.warnings.size(), 1u);
  EXPECT_NE(report.warnings.front().find("2stg"), std::string::npos);
}

TEST(Report, TamperedManifestSummaryIsFlagged) {
  const fs::path out = fresh_dir("tampered");
  std::vector<json> records;
  for (std::uint64_t s = 0; s < 5; ++s) records.push_back(fake_record("original", s, 0.8));
  write_fake_run(out, records);
  json manifest = json::parse(std::ifstream(out / "manifest.json"));
  manifest["summary"][0]["test_mean"] = 0.9;
  std::ofstream(out / "manifest.json") << manifest.dump();
  const Report report = build_report(out);
  ASSERT_EQ(report.warnings.size(), 1u);
  EXPECT_NE(report.table.find("0.800"), std::string::npos);
}

TEST(Report, MissingManifestIsIoError) { EXPECT_THROW(build_report(fresh_dir("empty")), IoError); }

#ifdef TSGNN_CLI
namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult cli(const std::string& args) {
  const fs::path capture = fs::temp_directory_path() / ("tsgnn_cli_capture_" + std::to_string(::getpid()) + ".txt");
  const std::string cmd = std::string(TSGNN_CLI) + " " + args + " > " + capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(capture);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

}  // namespace

TEST(Cli, ExitCodes) {
  const fs::path dir = fresh_dir("cli");
  json mutag = tiny_config();
  mutag["dataset"] = {{"kind", "tudataset"}, {"path", std::string(TSGNN_DATA_DIR) + "/MUTAG"}, {"name", "MUTAG"}};
  std::ofstream(dir / "mutag.json") << mutag.dump();
  const CliResult ingest = cli("ingest --config " + (dir / "mutag.json").string() + " --out " + (dir / "out").string());
  EXPECT_EQ(ingest.code, 0) << ingest.out;
  EXPECT_NE(ingest.out.find("graphs       188"), std::string::npos);
  EXPECT_NE(ingest.out.find("classes      2"), std::string::npos);
  EXPECT_EQ(load_dataset(dir / "out" / "dataset.cache").graphs.size(), 188u);

  json missing = mutag;
  missing["dataset"]["path"] = "/nonexistent/MUTAG";
  std::ofstream(dir / "missing.json") << missing.dump();
  const CliResult gone = cli("ingest --config " + (dir / "missing.json").string());
  EXPECT_EQ(gone.code, 2);
  EXPECT_NE(gone.out.find("/nonexistent/MUTAG"), std::string::npos);

  json bad = tiny_config();
  bad["grid"]["hidden_dim"] = {100};
  std::ofstream(dir / "bad.json") << bad.dump();
  const CliResult rejected = cli("train --config " + (dir / "bad.json").string() + " --out " + (dir / "bad").string());
  EXPECT_EQ(rejected.code, 2);
  EXPECT_NE(rejected.out.find("grid.hidden_dim"), std::string::npos);

  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("train").code, 2);
  EXPECT_EQ(cli("train --config x --mode 3stg").code, 2);
  EXPECT_EQ(cli("report --out " + (dir / "nothing").string()).code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, TrainThenReport) {
  const fs::path dir = fresh_dir("cli_train");
  std::ofstream(dir / "c.json") << tiny_config().dump();
  const std::string base = " --config " + (dir / "c.json").string() + " --out " + (dir / "out").string();
  const CliResult partial = cli("train" + base + " --stop-after 3");
  EXPECT_EQ(partial.code, 0) << partial.out;
  const CliResult gated = cli("report" + base);
  EXPECT_EQ(gated.code, 2);
  EXPECT_NE(gated.out.find("3 of 5"), std::string::npos) << gated.out;
  EXPECT_EQ(cli("train" + base + " --mode 2stg --jobs 2").code, 0);
  const CliResult report = cli("report" + base);
  EXPECT_EQ(report.code, 0) << report.out;
  EXPECT_NE(report.out.find("2stg"), std::string::npos);
}
#endif
