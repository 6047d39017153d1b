#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "tsgnn/error.hpp"
#include "tsgnn/graph.hpp"

namespace tsgnn {

namespace {

struct LineReader {
  std::ifstream in;
  std::string file;
  std::size_t line_no = 0;

  LineReader(const std::filesystem::path& path) : in(path), file(path.string()) {
    if (!in) throw IoError("cannot open " + file);
  }

  // Next non-blank line split on commas into integers.
  bool next(std::vector<long long>& fields) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      fields.clear();
      std::stringstream ss(line);
      std::string token;
      while (std::getline(ss, token, ',')) {
        const auto b = token.find_first_not_of(" \t\r");
        const auto e = token.find_last_not_of(" \t\r");
        if (b == std::string::npos) fail("empty field");
        long long value = 0;
        const char* first = token.data() + b;
        const char* last = token.data() + e + 1;
        if (*first == '+') ++first;
        auto [ptr, ec] = std::from_chars(first, last, value);
        if (ec != std::errc() || ptr != last) fail("not an integer: '" + token + "'");
        fields.push_back(value);
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(file + ":" + std::to_string(line_no) + ": " + what);
  }
};

std::filesystem::path required(const std::filesystem::path& dir, const std::string& file) {
  auto p = dir / file;
  if (!std::filesystem::exists(p)) throw IoError("missing required file " + p.string());
  return p;
}

}  // namespace

GraphDataset parse_tudataset(const std::filesystem::path& directory, const std::string& name) {
  const auto a_path = required(directory, name + "_A.txt");
  const auto indicator_path = required(directory, name + "_graph_indicator.txt");
  const auto labels_path = required(directory, name + "_graph_labels.txt");
  const auto node_labels_path = directory / (name + "_node_labels.txt");

  std::vector<long long> fields;

  // Node i (0-based global) -> graph id (1-based, as in the file).
  std::vector<long long> node_graph;
  {
    LineReader r(indicator_path);
    while (r.next(fields)) {
      if (fields.size() != 1 || fields[0] < 1) r.fail("expected a positive graph id");
      node_graph.push_back(fields[0]);
    }
  }
  std::vector<long long> raw_graph_labels;
  {
    LineReader r(labels_path);
    while (r.next(fields)) {
      if (fields.size() != 1) r.fail("expected one label per line");
      raw_graph_labels.push_back(fields[0]);
    }
  }
  std::vector<std::size_t> node_label;
  const bool has_node_labels = std::filesystem::exists(node_labels_path);
  if (has_node_labels) {
    LineReader r(node_labels_path);
    while (r.next(fields)) {
      if (fields.empty() || fields[0] < 0) r.fail("expected a non-negative node label");
      node_label.push_back(static_cast<std::size_t>(fields[0]));
    }
    if (node_label.size() != node_graph.size()) {
      throw FormatError(node_labels_path.string() + ": " + std::to_string(node_label.size()) + " labels for " +
                        std::to_string(node_graph.size()) + " nodes");
    }
  }

  // Distinct graph ids in ascending order; local index within each graph.
  std::map<long long, std::size_t> graph_slot;
  for (long long g : node_graph) graph_slot.emplace(g, 0);
  std::size_t slot = 0;
  for (auto& [g, s] : graph_slot) {
    if (static_cast<std::size_t>(g) > raw_graph_labels.size()) {
      throw FormatError(labels_path.string() + ": no label for graph " + std::to_string(g));
    }
    s = slot++;
  }
  std::vector<std::size_t> local_index(node_graph.size());
  std::vector<std::size_t> node_count(graph_slot.size(), 0);
  for (std::size_t i = 0; i < node_graph.size(); ++i) {
    const std::size_t s = graph_slot[node_graph[i]];
    local_index[i] = node_count[s]++;
  }

  std::vector<std::vector<Edge>> edges(graph_slot.size());
  {
    LineReader r(a_path);
    while (r.next(fields)) {
      if (fields.size() != 2) r.fail("expected 'u, v'");
      const long long u = fields[0], v = fields[1];
      const auto n = static_cast<long long>(node_graph.size());
      if (u < 1 || v < 1 || u > n || v > n) r.fail("node id out of range");
      if (node_graph[static_cast<std::size_t>(u - 1)] != node_graph[static_cast<std::size_t>(v - 1)]) {
        r.fail("edge (" + std::to_string(u) + ", " + std::to_string(v) + ") joins nodes of different graphs");
      }
      const std::size_t s = graph_slot[node_graph[static_cast<std::size_t>(u - 1)]];
      edges[s].emplace_back(local_index[static_cast<std::size_t>(u - 1)], local_index[static_cast<std::size_t>(v - 1)]);
    }
  }

  // Raw labels -> contiguous class indices, in ascending raw order.
  std::map<long long, std::size_t> label_map;
  for (const auto& [g, s] : graph_slot) label_map.emplace(raw_graph_labels[static_cast<std::size_t>(g - 1)], 0);
  std::size_t next_class = 0;
  std::ostringstream mapping;
  for (auto& [raw, cls] : label_map) {
    cls = next_class++;
    mapping << (cls ? ", " : "") << raw << "->" << cls;
  }

  std::vector<std::vector<std::size_t>> categories(graph_slot.size());
  for (std::size_t s = 0; s < categories.size(); ++s) categories[s].resize(node_count[s]);
  if (has_node_labels) {
    for (std::size_t i = 0; i < node_graph.size(); ++i) {
      categories[graph_slot[node_graph[i]]][local_index[i]] = node_label[i];
    }
  }

  GraphDataset ds;
  ds.name = name;
  ds.num_classes = label_map.size();
  ds.graphs.reserve(graph_slot.size());
  for (const auto& [g, s] : graph_slot) {
    std::vector<std::size_t> cats = std::move(categories[s]);
    if (!has_node_labels) {
      std::vector<std::size_t> degree(node_count[s], 0);
      for (const auto& e : edges[s]) ++degree[e.first];
      for (std::size_t v = 0; v < cats.size(); ++v) cats[v] = std::min(degree[v], kMaxDegreeCategory);
    }
    for (std::size_t c : cats) ds.num_feature_categories = std::max(ds.num_feature_categories, c + 1);
    ds.graphs.emplace_back(node_count[s], std::move(edges[s]), std::move(cats),
                           label_map[raw_graph_labels[static_cast<std::size_t>(g - 1)]],
                           name + ":" + std::to_string(g));
  }
  ds.provenance = "tudataset " + directory.string() + "; labels " + mapping.str() + "; node features " +
                  (has_node_labels ? "node labels" : "min(degree, 50)");
  ds.validate();
  return ds;
}

}  // namespace tsgnn
