#include <gtest/gtest.h>

#include "fedmesh/topology.hpp"
#include "support/fixtures.hpp"

using namespace fedmesh;

namespace {
TopologySpec spec(TopologyKind k, std::uint64_t seed = 0) {
  TopologySpec s;
  s.kind = k;
  s.seed = seed;
  if (k == TopologyKind::random) s.edge_probability = 0.5;
  if (k == TopologyKind::star) s.hub_id = 0;
  return s;
}
}  // namespace

TEST(Topology, Ring4) {
  const auto g = build_topology(spec(TopologyKind::ring), 4);
  EXPECT_EQ(g.edges(), (std::set<Edge>{{0, 1}, {1, 2}, {2, 3}, {0, 3}}));
  for (int i = 0; i < 4; ++i) EXPECT_EQ(g.degree(i), 2);
  EXPECT_EQ(g.neighbors(2), (std::vector<int>{1, 3}));
}

TEST(Topology, StarHubZero) {
  const auto g = build_topology(spec(TopologyKind::star), 4);
  EXPECT_EQ(g.degree(0), 3);
  for (int i = 1; i < 4; ++i) EXPECT_EQ(g.degree(i), 1);
  EXPECT_EQ(g.neighbors(0), (std::vector<int>{1, 2, 3}));
}

TEST(Topology, StarOtherHub) {
  auto s = spec(TopologyKind::star);
  s.hub_id = 2;
  const auto g = build_topology(s, 5);
  EXPECT_EQ(g.degree(2), 4);
  EXPECT_EQ(g.neighbors(4), std::vector<int>{2});
}

TEST(Topology, Fully4) {
  const auto g = build_topology(spec(TopologyKind::fully), 4);
  EXPECT_EQ(g.edges().size(), 6u);
  EXPECT_EQ(g.neighbors(1), (std::vector<int>{0, 2, 3}));
  EXPECT_TRUE(g.has_edge(3, 0));
}

TEST(Topology, RingTooSmall) {
  EXPECT_THROW(build_topology(spec(TopologyKind::ring), 2), ValidationError);
}

TEST(Topology, RandomSeed42Connected) {
  const auto g = build_topology(spec(TopologyKind::random, 42), 6);
  EXPECT_TRUE(fixtures::bfs_connected(6, g.edges()));
  EXPECT_TRUE(is_connected(g));
}

TEST(Topology, RandomManySeedsConnectedAndDeterministic) {
  Rng pick(5);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const int n = 2 + static_cast<int>(pick.below(15));
    const auto g = build_topology(spec(TopologyKind::random, seed), n);
    EXPECT_TRUE(fixtures::bfs_connected(n, g.edges())) << seed << " n=" << n;
    EXPECT_EQ(g, build_topology(spec(TopologyKind::random, seed), n));
    for (auto [a, b] : g.edges()) EXPECT_LT(a, b);
  }
}

TEST(Topology, RandomTinyProbabilityGivesUp) {
  auto s = spec(TopologyKind::random, 3);
  s.edge_probability = 1e-9;
  EXPECT_THROW(build_topology(s, 12), Error);
}

TEST(Topology, IsConnected) {
  EXPECT_TRUE(is_connected(build_topology(spec(TopologyKind::ring), 5)));
  EXPECT_FALSE(is_connected(TopologyGraph(2, {}, TopologyKind::random, 0)));
}

TEST(Topology, NeighborOutOfRange) {
  const auto g = build_topology(spec(TopologyKind::fully), 4);
  EXPECT_THROW(g.neighbors(4), std::out_of_range);
  EXPECT_THROW(g.neighbors(-1), std::out_of_range);
}

TEST(Topology, EdgesJsonRoundTrip) {
  const auto g = build_topology(spec(TopologyKind::random, 9), 7);
  EXPECT_EQ(edges_from_json(edges_to_json(g)), g.edges());
}
