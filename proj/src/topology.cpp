#include "fedmesh/topology.hpp"

#include <algorithm>
#include <queue>
#include <stdexcept>

#include <fmt/format.h>

#include "fedmesh/rng.hpp"

namespace fedmesh {

TopologyGraph::TopologyGraph(int n, std::set<Edge> edges, TopologyKind kind,
                             std::uint64_t seed)
    : n_(n), edges_(std::move(edges)), kind_(kind), seed_(seed), adjacency_(n) {
  for (const auto& [a, b] : edges_) {
    if (a == b) throw ValidationError(fmt::format("self-loop on node {}", a));
    if (a > b || a < 0 || b >= n) {
      throw ValidationError(fmt::format("malformed edge ({},{})", a, b));
    }
    adjacency_[a].push_back(b);
    adjacency_[b].push_back(a);
  }
  for (auto& adj : adjacency_) std::sort(adj.begin(), adj.end());
}

std::vector<int> TopologyGraph::neighbors(int id) const {
  if (id < 0 || id >= n_) {
    throw std::out_of_range(fmt::format("node id {} out of range 0..{}", id, n_ - 1));
  }
  return adjacency_[id];
}

int TopologyGraph::degree(int id) const {
  return static_cast<int>(neighbors(id).size());
}

bool TopologyGraph::has_edge(int a, int b) const {
  return edges_.count({std::min(a, b), std::max(a, b)}) > 0;
}

namespace {

Edge ordered(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

std::set<Edge> random_edges(int n, double p, std::uint64_t seed) {
  Rng rng(seed);
  std::set<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (rng.bernoulli(p)) edges.insert({i, j});
    }
  }
  return edges;
}

}  // namespace

TopologyGraph build_topology(const TopologySpec& spec, int n) {
  if (n < 1) throw ValidationError("topology needs at least one node");
  std::set<Edge> edges;
  switch (spec.kind) {
    case TopologyKind::fully:
      for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) edges.insert({i, j});
      break;
    case TopologyKind::star: {
      const int hub = spec.hub_id.value_or(0);
      if (hub < 0 || hub >= n) throw ValidationError("hub_id out of range");
      for (int i = 0; i < n; ++i)
        if (i != hub) edges.insert(ordered(hub, i));
      break;
    }
    case TopologyKind::ring:
      if (n < 3) throw ValidationError("ring topology requires n >= 3");
      for (int i = 0; i < n; ++i) edges.insert(ordered(i, (i + 1) % n));
      break;
    case TopologyKind::random: {
      const double p = spec.edge_probability.value_or(0.5);
      if (!(p > 0.0 && p <= 1.0)) {
        throw ValidationError("edge_probability must be in (0,1]");
      }
      constexpr int kMaxAttempts = 1000;
      for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        TopologyGraph g(n, random_edges(n, p, mix_seed(spec.seed, attempt)),
                        spec.kind, spec.seed);
        if (is_connected(g)) return g;
      }
      throw ValidationError(fmt::format(
          "random topology (n={}, p={}) not connected after {} attempts", n, p,
          kMaxAttempts));
    }
  }
  return TopologyGraph(n, std::move(edges), spec.kind, spec.seed);
}

bool is_connected(const TopologyGraph& g) {
  const int n = g.node_count();
  if (n <= 1) return true;
  std::vector<bool> seen(n, false);
  std::queue<int> frontier;
  frontier.push(0);
  seen[0] = true;
  int reached = 1;
  while (!frontier.empty()) {
    const int cur = frontier.front();
    frontier.pop();
    for (int next : g.neighbors(cur)) {
      if (!seen[next]) {
        seen[next] = true;
        ++reached;
        frontier.push(next);
      }
    }
  }
  return reached == n;
}

nlohmann::json edges_to_json(const TopologyGraph& g) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [a, b] : g.edges()) arr.push_back({a, b});
  return arr;
}

std::set<Edge> edges_from_json(const nlohmann::json& arr) {
  if (!arr.is_array()) throw ValidationError("edges: expected an array");
  std::set<Edge> edges;
  for (const auto& e : arr) {
    if (!e.is_array() || e.size() != 2) {
      throw ValidationError("edges: each edge must be a [a, b] pair");
    }
    edges.insert(ordered(e[0].get<int>(), e[1].get<int>()));
  }
  return edges;
}

}  // namespace fedmesh
