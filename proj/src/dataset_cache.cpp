#include <fstream>
#include <sstream>

#include "json.hpp"

#include "tsgnn/error.hpp"
#include "tsgnn/graph.hpp"

namespace tsgnn {

using nlohmann::json;

namespace {
constexpr const char* kMagic = "tsgnn-dataset";
}

void save_dataset(const GraphDataset& ds, const std::filesystem::path& path) {
  json doc;
  doc["name"] = ds.name;
  doc["num_classes"] = ds.num_classes;
  doc["num_feature_categories"] = ds.num_feature_categories;
  doc["provenance"] = ds.provenance;
  json graphs = json::array();
  for (const auto& g : ds.graphs) {
    json edges = json::array();
    for (const auto& [u, v] : g.edges()) edges.push_back({u, v});
    graphs.push_back({{"id", g.graph_id()},
                      {"label", g.label()},
                      {"nodes", g.node_count()},
                      {"categories", g.node_categories()},
                      {"edges", std::move(edges)}});
  }
  doc["graphs"] = std::move(graphs);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << kMagic << ' ' << kDatasetCacheVersion << '\n' << doc.dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

GraphDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string magic;
  int version = 0;
  hs >> magic >> version;
  if (magic != kMagic) throw FormatError(path.string() + ":1: not a dataset cache");
  if (version != kDatasetCacheVersion) {
    throw FormatError(path.string() + ":1: unsupported cache version " + std::to_string(version));
  }
  GraphDataset ds;
  try {
    const json doc = json::parse(in);
    ds.name = doc.at("name").get<std::string>();
    ds.num_classes = doc.at("num_classes").get<std::size_t>();
    ds.num_feature_categories = doc.at("num_feature_categories").get<std::size_t>();
    ds.provenance = doc.at("provenance").get<std::string>();
    for (const auto& g : doc.at("graphs")) {
      std::vector<Edge> edges;
      for (const auto& e : g.at("edges")) edges.emplace_back(e.at(0).get<std::size_t>(), e.at(1).get<std::size_t>());
      ds.graphs.emplace_back(g.at("nodes").get<std::size_t>(), std::move(edges),
                             g.at("categories").get<std::vector<std::size_t>>(), g.at("label").get<std::size_t>(),
                             g.at("id").get<std::string>());
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  ds.validate(false);
  return ds;
}

}  // namespace tsgnn
