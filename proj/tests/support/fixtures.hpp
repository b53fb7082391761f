#pragma once

#include <cmath>
#include <algorithm>
#include <queue>
#include <set>
#include <vector>

#include "fedmesh/model.hpp"
#include "fedmesh/rng.hpp"
#include "fedmesh/scenario.hpp"
#include "fedmesh/topology.hpp"

namespace fedmesh::fixtures {

inline ScenarioConfig synth_scenario(int n, TopologyKind kind, std::uint64_t seed = 1,
                                     int base_port = 20000) {
  ScenarioConfig cfg;
  cfg.scenario_name = "test";
  for (int i = 0; i < n; ++i) {
    cfg.participants.push_back({i, "127.0.0.1", base_port + i, base_port + 100 + i, ""});
  }
  cfg.topology.kind = kind;
  cfg.topology.seed = seed;
  if (kind == TopologyKind::random) cfg.topology.edge_probability = 0.5;
  if (kind == TopologyKind::star) cfg.topology.hub_id = 0;
  cfg.dataset.source = DatasetSource::synthetic;
  cfg.dataset.synthetic = SyntheticSpec{4000, 20, 4, 0.05};
  cfg.model = {20, {128}, 4, InitScheme::uniform_he};
  cfg.master_seed = seed;
  return cfg;
}

// Smaller variant for tests that only care about plumbing.
inline ScenarioConfig tiny_scenario(int n, TopologyKind kind, std::uint64_t seed = 1) {
  auto cfg = synth_scenario(n, kind, seed);
  cfg.dataset.synthetic = SyntheticSpec{400, 6, 3, 0.05};
  cfg.model = {6, {8}, 3, InitScheme::uniform_he};
  cfg.rounds = 3;
  return cfg;
}

inline ModelParams random_params(const ModelSpec& arch, Rng& rng, double scale = 1.0) {
  ModelParams p;
  p.arch = arch;
  p.digest = arch_digest(arch);
  p.values.resize(parameter_count(arch));
  for (auto& v : p.values) v = rng.uniform(-scale, scale);
  return p;
}

// Plain loop oracle for the element-wise mean.
inline std::vector<double> naive_mean(const std::vector<std::vector<double>>& vs) {
  std::vector<double> out(vs.at(0).size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    long double acc = 0;
    for (const auto& v : vs) acc += v[i];
    out[i] = static_cast<double>(acc / vs.size());
  }
  return out;
}

// Central differences of the loss, one coordinate at a time.
inline std::vector<double> fd_gradient(const ModelParams& p, const Matrix& x,
                                       std::span<const int> y, double h = 1e-6) {
  std::vector<double> g(p.values.size());
  ModelParams q = p;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double orig = q.values[i];
    q.values[i] = orig + h;
    const double up = loss(q, x, y);
    q.values[i] = orig - h;
    const double down = loss(q, x, y);
    q.values[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline bool bfs_connected(int n, const std::set<Edge>& edges) {
  if (n <= 1) return true;
  std::vector<std::vector<int>> adj(n);
  for (auto [a, b] : edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(n, false);
  std::queue<int> q;
  q.push(0);
  seen[0] = true;
  int count = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = true;
        ++count;
        q.push(v);
      }
    }
  }
  return count == n;
}

// Components below `floor` are compared on an absolute scale; central
// differences carry ~1e-10 of roundoff there.
inline double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                            double floor = 1e-4) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace fedmesh::fixtures
