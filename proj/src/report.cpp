#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "tsgnn/error.hpp"
#include "tsgnn/experiment.hpp"

namespace tsgnn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kModeOrder{"original", "2stg", "2stg+"};

std::string mode_dir(const std::string& mode) { return mode == "2stg+" ? "2stg_plus" : mode; }

EmbeddingMatrix decode_embeddings(const json& e) {
  EmbeddingMatrix m;
  const auto rows = e.at("rows").get<Eigen::Index>();
  const auto cols = e.at("cols").get<Eigen::Index>();
  const auto& values = e.at("values");
  if (values.size() != static_cast<std::size_t>(rows * cols)) throw FormatError("val_embeddings: size mismatch");
  m.values.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m.values(i, j) = values[static_cast<std::size_t>(i * cols + j)].get<double>();
  m.labels = e.at("labels").get<std::vector<std::size_t>>();
  return m;
}

// Records of the selected config, by seed.
std::vector<const json*> best_config_records(const std::vector<const json*>& records, std::size_t config_index) {
  std::vector<const json*> out;
  for (const json* r : records)
    if (r->at("config_index").get<std::size_t>() == config_index) out.push_back(r);
  std::sort(out.begin(), out.end(),
            [](const json* a, const json* b) { return a->at("seed").get<std::uint64_t>() < b->at("seed").get<std::uint64_t>(); });
  return out;
}

std::map<std::string, std::vector<const json*>> group_by_mode(const std::vector<json>& records) {
  std::map<std::string, std::vector<const json*>> by_mode;
  for (const json& r : records) by_mode[r.at("mode").get<std::string>()].push_back(&r);
  return by_mode;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  // "±" is two bytes but one column.
  std::size_t columns = 0;
  for (unsigned char c : s) columns += (c & 0xC0) != 0x80;
  return s + std::string(width > columns ? width - columns : 0, ' ');
}

}  // namespace

std::vector<SettingRow> summarize_records(const std::vector<json>& records) {
  std::vector<SettingRow> rows;
  const auto by_mode = group_by_mode(records);
  for (const std::string& mode : kModeOrder) {
    const auto it = by_mode.find(mode);
    if (it == by_mode.end()) continue;
    std::vector<TrialOutcome> outcomes;
    for (const json* r : it->second) {
      outcomes.push_back({r->at("config_index").get<std::size_t>(), r->at("seed").get<std::uint64_t>(),
                          r->at("best_val_accuracy").get<double>(), r->at("test_accuracy").get<double>()});
    }
    SettingRow row;
    row.mode = mode;
    row.summary = select_configuration(outcomes);
    const auto best = best_config_records(it->second, row.summary.best_config);
    row.dataset = best.front()->value("dataset", std::string{});
    row.architecture = best.front()->at("config").at("model").at("architecture").get<std::string>();
    std::size_t analysed = 0;
    for (const json* r : best) {
      const EmbeddingMatrix emb = decode_embeddings(r->at("val_embeddings"));
      if (emb.values.rows() < 2 || emb.values.cols() < 2) continue;
      const AnalysisReport a = analyze(emb);
      row.intrinsic_dimension += a.intrinsic_dimension;
      row.avg_abs_correlation += a.avg_abs_correlation;
      ++analysed;
    }
    if (analysed > 0) {
      row.intrinsic_dimension /= static_cast<double>(analysed);
      row.avg_abs_correlation /= static_cast<double>(analysed);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

json summary_to_json(const std::vector<SettingRow>& rows) {
  json out = json::array();
  for (const auto& r : rows) {
    out.push_back({{"dataset", r.dataset},
                   {"architecture", r.architecture},
                   {"mode", r.mode},
                   {"best_config", r.summary.best_config},
                   {"mean_val_accuracy", r.summary.mean_val_accuracy},
                   {"test_mean", r.summary.test.mean},
                   {"test_std", r.summary.test.stddev},
                   {"runs", r.summary.runs},
                   {"complete", r.summary.complete},
                   {"intrinsic_dimension", r.intrinsic_dimension},
                   {"avg_abs_correlation", r.avg_abs_correlation}});
  }
  return out;
}

std::string format_accuracy(const RunSummary& s) { return fixed(s.mean, 3) + " ± " + fixed(s.stddev, 3); }

Report build_report(const fs::path& out_dir) {
  const fs::path manifest_path = out_dir / "manifest.json";
  std::ifstream min(manifest_path);
  if (!min) throw IoError("no manifest.json in " + out_dir.string());
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }

  Report report;
  std::map<std::string, json> logged;
  {
    const fs::path log_path = out_dir / manifest.value("trial_log", std::string("trials.jsonl"));
    std::ifstream in(log_path);
    if (!in) throw IoError("trial log missing: " + log_path.string());
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      try {
        json r = json::parse(line);
        auto id = r.at("trial_id").get<std::string>();
        logged[id] = std::move(r);
      } catch (const json::exception&) {
        report.warnings.push_back("dropping unreadable line in trial log");
      }
    }
  }

  std::vector<json> records;
  for (const json& ref : manifest.at("trials")) {
    const auto id = ref.at("trial_id").get<std::string>();
    const auto it = logged.find(id);
    if (it == logged.end()) {
      report.warnings.push_back("trial " + id + " listed in manifest but missing from the log");
      continue;
    }
    if (!fs::exists(out_dir / ref.at("checkpoint").get<std::string>())) {
      report.warnings.push_back("trial " + id + ": checkpoint file missing");
    }
    records.push_back(it->second);
  }

  const std::vector<SettingRow> rows = summarize_records(records);
  const json recomputed = summary_to_json(rows);
  if (manifest.contains("summary") && manifest.at("summary") != recomputed) {
    report.warnings.push_back("manifest summary differs from the trial log; using the trial log");
  }
  for (const auto& row : rows) {
    if (row.summary.complete) {
      report.complete.push_back(row);
    } else {
      report.partial.push_back(row);
      report.warnings.push_back(row.mode + ": only " + std::to_string(row.summary.runs) + " of " +
                                std::to_string(kSplitsPerSetting) + " runs for the selected config; excluded");
    }
  }

  const fs::path report_dir = out_dir / "report";
  fs::create_directories(report_dir);
  const auto by_mode = group_by_mode(records);
  for (const auto& row : rows) {
    const auto best = best_config_records(by_mode.at(row.mode), row.summary.best_config);
    const fs::path dir = report_dir / mode_dir(row.mode);
    fs::create_directories(dir);
    const json& first = *best.front();
    const EmbeddingMatrix emb = decode_embeddings(first.at("val_embeddings"));
    if (emb.values.rows() >= 2 && emb.values.cols() >= 2) {
      write_scatter_csv(dir / "scatter.csv", export_scatter_2d(emb));
      write_variance_curve_csv(dir / "variance.csv", pca_explained_variance(emb).cumulative);
    }
    write_correlation_trace_csv(dir / "correlation_trace.csv",
                                first.at("correlation_trace").get<std::vector<double>>());
  }

  std::ostringstream table;
  table << pad("dataset", 14) << pad("architecture", 14) << pad("mode", 10) << pad("test accuracy", 17)
        << pad("intrinsic dim", 15) << pad("avg |corr|", 12) << "runs\n";
  for (const auto& row : report.complete) {
    table << pad(row.dataset, 14) << pad(row.architecture, 14) << pad(row.mode, 10)
          << pad(format_accuracy(row.summary.test), 17) << pad(fixed(row.intrinsic_dimension, 2), 15)
          << pad(fixed(row.avg_abs_correlation, 3), 12) << row.summary.runs << "\n";
  }
  report.table = table.str();

  json out{{"complete", summary_to_json(report.complete)},
           {"partial", summary_to_json(report.partial)},
           {"warnings", report.warnings},
           {"code_version", manifest.value("code_version", std::string{})}};
  std::ofstream rj(report_dir / "report.json");
  if (!rj) throw IoError("cannot write " + (report_dir / "report.json").string());
  rj << out.dump(2) << "\n";
  return report;
}

}  // namespace tsgnn
