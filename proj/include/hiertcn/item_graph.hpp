// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <unordered_map>
#include <utility>
#include <vector>

#include <hiertcn/interactions.hpp>
#include <hiertcn/rng.hpp>
#include <hiertcn/tensor.hpp>

namespace hiertcn {

// Undirected item co-interaction graph: an edge joins two items when the
// same user interacted with both within `window_seconds`.  Nodes cover
// every item seen in the log (impressions too, so downstream embedding
// lookups never miss), but only interactions create edges.
struct ItemGraph {
  std::vector<std::uint64_t> ids;             // sorted, unique item ids
  std::vector<std::vector<std::size_t>> adj;  // sorted neighbor indices, no self loops
  Tensor<double> features;                    // [n, d0] initial node features
  std::unordered_map<std::uint64_t, std::size_t> index;

  std::size_t size() const { return ids.size(); }

  std::size_t edge_count() const {
    std::size_t deg = 0;
    for (const auto& a : adj) deg += a.size();
    return deg / 2;
  }

  bool has_edge(std::size_t a, std::size_t b) const {
    return std::binary_search(adj[a].begin(), adj[a].end(), b);
  }
};

inline ItemGraph build_item_graph(const std::vector<Interaction>& log,
                                  std::int64_t window_seconds) {
  if (window_seconds < 0) throw ConfigError("item graph: window_seconds must be >= 0");

  ItemGraph g;
  {
    std::set<std::uint64_t> seen;
    for (const auto& e : log) seen.insert(e.item);
    g.ids.assign(seen.begin(), seen.end());
  }
  for (std::size_t i = 0; i < g.ids.size(); ++i) g.index[g.ids[i]] = i;
  g.adj.resize(g.ids.size());

  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (const auto& [user, events] : group_by_user(log)) {
    std::vector<const Interaction*> ints;
    for (const auto& e : events)
      if (e.kind == EventKind::Interaction) ints.push_back(&e);
    for (std::size_t i = 1; i < ints.size(); ++i)
      if (ints[i]->timestamp < ints[i - 1]->timestamp)
        throw DataError("item graph: interactions for user " + std::to_string(user) +
                        " are not sorted by timestamp");
    // Sliding window over this user's interactions, inclusive bound.
    std::size_t lo = 0;
    for (std::size_t hi = 0; hi < ints.size(); ++hi) {
      while (ints[hi]->timestamp - ints[lo]->timestamp > window_seconds) ++lo;
      const std::size_t b = g.index[ints[hi]->item];
      for (std::size_t j = lo; j < hi; ++j) {
        const std::size_t a = g.index[ints[j]->item];
        if (a == b) continue;
        edges.emplace(std::min(a, b), std::max(a, b));
      }
    }
  }
  for (const auto& [a, b] : edges) {
    g.adj[a].push_back(b);
    g.adj[b].push_back(a);
  }
  for (auto& nb : g.adj) std::sort(nb.begin(), nb.end());
  return g;
}

// Unit-norm random features for graphs that come without side information.
inline void attach_random_features(ItemGraph& g, std::size_t d0, Rng rng) {
  if (d0 == 0) throw ConfigError("item graph: feature dim must be > 0");
  g.features = Tensor<double>({g.size(), d0});
  for (std::size_t u = 0; u < g.size(); ++u) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < d0; ++j) {
      const double x = rng.normal();
      g.features.at(u, j) = x;
      norm2 += x * x;
    }
    const double inv = 1.0 / std::sqrt(std::max(norm2, 1e-12));
    for (std::size_t j = 0; j < d0; ++j) g.features.at(u, j) *= inv;
  }
}

}  // namespace hiertcn
