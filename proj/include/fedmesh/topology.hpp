#pragma once

#include <cstdint>
#include <set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fedmesh/scenario.hpp"

namespace fedmesh {

using Edge = std::pair<int, int>;  // stored with first < second

// Undirected overlay graph. Edges define who exchanges models with whom.
class TopologyGraph {
 public:
  TopologyGraph() = default;
  TopologyGraph(int n, std::set<Edge> edges, TopologyKind kind,
                std::uint64_t seed);

  int node_count() const { return n_; }
  const std::set<Edge>& edges() const { return edges_; }
  TopologyKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }

  // Ascending node ids. Throws std::out_of_range for an invalid id.
  std::vector<int> neighbors(int id) const;
  int degree(int id) const;
  bool has_edge(int a, int b) const;

  bool operator==(const TopologyGraph&) const = default;

 private:
  int n_ = 0;
  std::set<Edge> edges_;
  TopologyKind kind_ = TopologyKind::fully;
  std::uint64_t seed_ = 0;
  std::vector<std::vector<int>> adjacency_;
};

// Random graphs are G(n, p), resampled with an incremented sub-seed until
// connected (at most 1000 attempts).
TopologyGraph build_topology(const TopologySpec& spec, int n);

bool is_connected(const TopologyGraph& g);

// Edge-list form used inside distributed configs: [[0,1],[1,2],...].
nlohmann::json edges_to_json(const TopologyGraph& g);
std::set<Edge> edges_from_json(const nlohmann::json& arr);

}  // namespace fedmesh
