#pragma once

#include <numeric>
#include <vector>

#include "tsgnn/graph.hpp"
#include "tsgnn/rng.hpp"

namespace tsgnn::testing {

// Undirected random graph: each pair joined with probability p.
inline Graph random_graph(Rng& rng, std::size_t n, double p, std::size_t categories, std::size_t label = 0) {
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t v = u + 1; v < n; ++v)
      if (rng.uniform() < p) {
        edges.emplace_back(u, v);
        edges.emplace_back(v, u);
      }
  std::vector<std::size_t> cats(n);
  for (auto& c : cats) c = rng.index(categories);
  return Graph(n, std::move(edges), std::move(cats), label, "random");
}

// Same graph with node i renamed to perm[i].
inline Graph permuted(const Graph& g, const std::vector<std::size_t>& perm) {
  std::vector<Edge> edges;
  for (const auto& [u, v] : g.edges()) edges.emplace_back(perm[u], perm[v]);
  std::vector<std::size_t> cats(g.node_count());
  for (std::size_t i = 0; i < g.node_count(); ++i) cats[perm[i]] = g.node_categories()[i];
  return Graph(g.node_count(), std::move(edges), std::move(cats), g.label(), g.graph_id());
}

inline std::vector<std::size_t> random_permutation(Rng& rng, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  return perm;
}

}  // namespace tsgnn::testing
