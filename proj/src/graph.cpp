#include "tsgnn/graph.hpp"

#include <algorithm>
#include <numeric>

#include "tsgnn/error.hpp"
#include "tsgnn/rng.hpp"

namespace tsgnn {

Graph::Graph(std::size_t node_count, std::vector<Edge> edges, std::vector<std::size_t> node_categories,
             std::size_t label, std::string graph_id)
    : node_count_(node_count),
      edges_(std::move(edges)),
      categories_(std::move(node_categories)),
      label_(label),
      graph_id_(std::move(graph_id)) {
  if (categories_.size() != node_count_) {
    throw FormatError("graph " + graph_id_ + ": " + std::to_string(categories_.size()) + " categories for " +
                      std::to_string(node_count_) + " nodes");
  }
  offsets_.assign(node_count_ + 1, 0);
  for (const auto& [u, v] : edges_) {
    if (u >= node_count_ || v >= node_count_) {
      throw FormatError("graph " + graph_id_ + ": edge (" + std::to_string(u) + ", " + std::to_string(v) +
                        ") outside " + std::to_string(node_count_) + " nodes");
    }
    ++offsets_[u + 1];
  }
  std::partial_sum(offsets_.begin(), offsets_.end(), offsets_.begin());
  adjacency_.resize(edges_.size());
  std::vector<std::size_t> cursor(offsets_.begin(), offsets_.end() - 1);
  for (const auto& [u, v] : edges_) adjacency_[cursor[u]++] = v;
}

std::span<const std::size_t> Graph::neighbors(std::size_t v) const {
  return std::span<const std::size_t>(adjacency_).subspan(offsets_[v], offsets_[v + 1] - offsets_[v]);
}

std::vector<std::size_t> Graph::in_degrees() const {
  std::vector<std::size_t> deg(node_count_, 0);
  for (const auto& e : edges_) ++deg[e.second];
  return deg;
}

std::vector<std::size_t> GraphDataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(graphs.size());
  for (const auto& g : graphs) out.push_back(g.label());
  return out;
}

std::size_t GraphDataset::max_nodes() const {
  std::size_t best = 0;
  for (const auto& g : graphs) best = std::max(best, g.node_count());
  return best;
}

double GraphDataset::mean_nodes() const {
  if (graphs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& g : graphs) total += static_cast<double>(g.node_count());
  return total / static_cast<double>(graphs.size());
}

double GraphDataset::mean_edges() const {
  if (graphs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& g : graphs) total += static_cast<double>(g.edges().size());
  return total / static_cast<double>(graphs.size());
}

void GraphDataset::validate(bool require_all_classes) const {
  std::vector<bool> seen(num_classes, false);
  for (const auto& g : graphs) {
    if (g.label() >= num_classes) {
      throw FormatError(name + ": graph " + g.graph_id() + " has label " + std::to_string(g.label()) +
                        " outside " + std::to_string(num_classes) + " classes");
    }
    seen[g.label()] = true;
    for (std::size_t c : g.node_categories()) {
      if (c >= num_feature_categories) {
        throw FormatError(name + ": graph " + g.graph_id() + " has node category " + std::to_string(c) +
                          " outside " + std::to_string(num_feature_categories));
      }
    }
  }
  if (require_all_classes) {
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (!seen[c]) throw FormatError(name + ": class " + std::to_string(c) + " never occurs");
    }
  }
}

SplitPlan make_splits(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw DomainError("make_splits: need at least 10 graphs, got " + std::to_string(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x5e11));
  rng.shuffle(order);
  const std::size_t held = n / 10;
  SplitPlan plan;
  plan.seed = seed;
  plan.val.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
  plan.test.assign(order.begin() + static_cast<std::ptrdiff_t>(held),
                   order.begin() + static_cast<std::ptrdiff_t>(2 * held));
  plan.train.assign(order.begin() + static_cast<std::ptrdiff_t>(2 * held), order.end());
  std::sort(plan.train.begin(), plan.train.end());
  std::sort(plan.val.begin(), plan.val.end());
  std::sort(plan.test.begin(), plan.test.end());
  return plan;
}

GraphDataset make_clique_path_dataset(std::size_t num_graphs, std::uint64_t seed, std::size_t nodes,
                                      std::size_t num_colors) {
  if (nodes < 2 || num_colors == 0) throw DomainError("make_clique_path_dataset: need >= 2 nodes and >= 1 colour");
  Rng rng(seed);
  GraphDataset ds;
  ds.name = "clique_path";
  ds.num_classes = 2;
  ds.num_feature_categories = nodes * num_colors;
  ds.provenance = "synthetic: " + std::to_string(nodes) + "-cliques (label 0) vs " + std::to_string(nodes) +
                  "-paths (label 1), seed " + std::to_string(seed);
  for (std::size_t g = 0; g < num_graphs; ++g) {
    const std::size_t label = g % 2;
    std::vector<Edge> edges;
    if (label == 0) {
      for (std::size_t u = 0; u < nodes; ++u)
        for (std::size_t v = 0; v < nodes; ++v)
          if (u != v) edges.emplace_back(u, v);
    } else {
      for (std::size_t u = 0; u + 1 < nodes; ++u) {
        edges.emplace_back(u, u + 1);
        edges.emplace_back(u + 1, u);
      }
    }
    std::vector<std::size_t> degree(nodes, 0);
    for (const auto& e : edges) ++degree[e.first];
    std::vector<std::size_t> categories(nodes);
    for (std::size_t v = 0; v < nodes; ++v) categories[v] = degree[v] * num_colors + rng.index(num_colors);
    ds.graphs.emplace_back(nodes, std::move(edges), std::move(categories), label, "synthetic:" + std::to_string(g));
  }
  ds.validate(num_graphs >= 2);
  return ds;
}

}  // namespace tsgnn
