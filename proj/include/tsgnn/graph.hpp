#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace tsgnn {

using Edge = std::pair<std::size_t, std::size_t>;

// A labeled graph with directed edge list, CSR out-neighbors and per-node
// feature categories. Undirected inputs carry both (u, v) and (v, u).
// Parallel edges are kept.
class Graph {
 public:
  Graph() = default;
  // Validates endpoints and category count; throws FormatError on violations.
  Graph(std::size_t node_count, std::vector<Edge> edges, std::vector<std::size_t> node_categories,
        std::size_t label, std::string graph_id);

  std::size_t node_count() const { return node_count_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<std::size_t>& node_categories() const { return categories_; }
  std::size_t label() const { return label_; }
  const std::string& graph_id() const { return graph_id_; }

  std::span<const std::size_t> neighbors(std::size_t v) const;
  std::size_t out_degree(std::size_t v) const { return offsets_[v + 1] - offsets_[v]; }
  std::vector<std::size_t> in_degrees() const;

  bool operator==(const Graph& other) const = default;

 private:
  std::size_t node_count_ = 0;
  std::vector<Edge> edges_;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> adjacency_;
  std::vector<std::size_t> categories_;
  std::size_t label_ = 0;
  std::string graph_id_;
};

struct GraphDataset {
  std::string name;
  std::vector<Graph> graphs;
  std::size_t num_classes = 0;
  std::size_t num_feature_categories = 0;
  std::string provenance;

  std::vector<std::size_t> labels() const;
  std::size_t max_nodes() const;
  double mean_nodes() const;
  double mean_edges() const;
  // Label and category ranges; with require_all_classes, every class must occur.
  void validate(bool require_all_classes = true) const;

  bool operator==(const GraphDataset& other) const = default;
};

struct SplitPlan {
  std::uint64_t seed = 0;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// Pickup time is a naive local civil time; minutes are kept but only the hour
// bucket matters.
struct TaxiTrip {
  int year = 1970;
  unsigned month = 1;
  unsigned day = 1;
  unsigned hour = 0;
  unsigned minute = 0;
  std::size_t source_zone = 0;
  std::size_t dest_zone = 0;
};

// TUDataset text layout: {name}_A.txt, {name}_graph_indicator.txt,
// {name}_graph_labels.txt and optional {name}_node_labels.txt.
// Without node labels, node category = min(out-degree, 50).
GraphDataset parse_tudataset(const std::filesystem::path& directory, const std::string& name);

inline constexpr std::size_t kMaxDegreeCategory = 50;

// Parses "YYYY-MM-DD HH:MM:SS"; throws FormatError otherwise.
TaxiTrip parse_trip_time(const std::string& timestamp);
// CSV with header pickup_datetime,PULocationID,DOLocationID.
std::vector<TaxiTrip> read_trip_csv(const std::filesystem::path& path);
void write_trip_csv(const std::filesystem::path& path, std::span<const TaxiTrip> trips);

// One graph per civil hour from the first trip's hour to the last one's.
// Every graph has zone_count nodes with category = zone id; each trip adds one
// directed edge. Label 0 for Mon-Thu, 1 for Fri-Sun. num_classes is always 2.
GraphDataset build_taxi_dataset(std::span<const TaxiTrip> trips, std::size_t zone_count,
                                const std::string& name = "taxi");

// 0 = Sunday ... 6 = Saturday.
unsigned weekday_of(int year, unsigned month, unsigned day);

// Random 80/10/10 partition: |val| = |test| = floor(n/10). Requires n >= 10.
SplitPlan make_splits(std::size_t n, std::uint64_t seed);

// Alternating 5-cliques (label 0) and 5-paths (label 1). Node category combines
// degree and a random colour so graphs of one class are not identical.
GraphDataset make_clique_path_dataset(std::size_t num_graphs, std::uint64_t seed, std::size_t nodes = 5,
                                      std::size_t num_colors = 3);

// Dataset cache: first line "tsgnn-dataset <version>", then a JSON document.
inline constexpr int kDatasetCacheVersion = 1;
void save_dataset(const GraphDataset& dataset, const std::filesystem::path& path);
GraphDataset load_dataset(const std::filesystem::path& path);

}  // namespace tsgnn
