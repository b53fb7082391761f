#include <gtest/gtest.h>

#include "fedmesh/simulation.hpp"
#include "support/fixtures.hpp"

using namespace fedmesh;

namespace {
SimPlan plan(const ScenarioConfig& cfg, SimTransport t = SimTransport::memory) {
  SimPlan p;
  p.scenario = cfg;
  p.transport = t;
  p.time_compression = 50;
  return p;
}

std::uint64_t frame_bytes(const ScenarioConfig& cfg) {
  return model_frame_size(serialized_size(cfg.model));
}
}  // namespace

TEST(Simulation, DeterministicAcrossRunsAndTransports) {
  const auto cfg = fixtures::tiny_scenario(4, TopologyKind::ring, 8);
  const auto a = run_simulation(plan(cfg));
  const auto b = run_simulation(plan(cfg));
  const auto c = run_simulation(plan(cfg, SimTransport::loopback));
  ASSERT_EQ(a.record.status, RunStatus::complete);
  ASSERT_EQ(c.record.status, RunStatus::complete);
  for (int id = 0; id < 4; ++id) {
    const auto& sa = a.record.summaries.at(id);
    EXPECT_EQ(sa.f1_per_round, b.record.summaries.at(id).f1_per_round);
    EXPECT_EQ(sa.param_fingerprints, b.record.summaries.at(id).param_fingerprints);
    EXPECT_EQ(sa.param_fingerprints, c.record.summaries.at(id).param_fingerprints);
    EXPECT_EQ(sa.total_bytes_sent, c.record.summaries.at(id).total_bytes_sent);
  }
}

TEST(Simulation, ClosedFormTraffic) {
  for (auto kind : {TopologyKind::fully, TopologyKind::ring, TopologyKind::star, TopologyKind::random}) {
    const auto cfg = fixtures::tiny_scenario(4, kind, 2);
    const auto r = run_simulation(plan(cfg));
    ASSERT_EQ(r.record.status, RunStatus::complete);
    const auto g = build_topology(cfg.topology, 4);
    std::uint64_t total = 0;
    for (const auto& [id, s] : r.record.summaries) {
      const std::uint64_t want = static_cast<std::uint64_t>(cfg.rounds) * g.degree(id) * frame_bytes(cfg);
      EXPECT_EQ(s.total_bytes_sent, want);
      EXPECT_EQ(s.total_bytes_recv, want);
      total += s.total_bytes_sent;
    }
    EXPECT_EQ(total, cfg.rounds * 2 * g.edges().size() * frame_bytes(cfg));
    std::uint64_t report_total = 0;
    for (std::size_t i = 0; i + 1 < r.report->rows.size(); ++i) report_total += r.report->rows[i].bytes_sent;
    EXPECT_EQ(report_total, total);
  }
}

TEST(Simulation, FullyConnectedConsensus) {
  const auto cfg = fixtures::tiny_scenario(4, TopologyKind::fully, 5);
  const auto r = run_simulation(plan(cfg));
  const auto& ref = r.record.summaries.at(0).param_fingerprints;
  ASSERT_EQ(ref.size(), static_cast<std::size_t>(cfg.rounds));
  for (int id = 1; id < 4; ++id) EXPECT_EQ(r.record.summaries.at(id).param_fingerprints, ref);
}

TEST(Simulation, NodeMetricsReachController) {
  auto cfg = fixtures::tiny_scenario(2, TopologyKind::fully, 5);
  cfg.metric_interval_ms = 200;
  auto p = plan(cfg, SimTransport::loopback);
  p.time_compression = 1;
  p.edge_profile = EdgeProfile{0.3, 0.1};
  const auto r = run_simulation(p);
  ASSERT_EQ(r.record.status, RunStatus::complete);
  for (int id = 0; id < 2; ++id) {
    EXPECT_GE(r.record.reports.at(id).size(), 4u);
    EXPECT_EQ(r.record.summaries.at(id).dropped_reports, 0u);
  }
}

TEST(Sweep, SeedChangesKeepTrafficAndSummaryOrdered) {
  std::vector<SimPlan> plans;
  for (auto kind : {TopologyKind::ring, TopologyKind::fully}) {
    for (std::uint64_t seed : {1, 2}) plans.push_back(plan(fixtures::tiny_scenario(4, kind, seed)));
  }
  const auto s = sweep(plans);
  ASSERT_EQ(s.entries.size(), 4u);
  EXPECT_EQ(s.entries[0].result.record.summaries.at(0).total_bytes_sent,
            s.entries[1].result.record.summaries.at(0).total_bytes_sent);
  ASSERT_EQ(s.summary.size(), 2u);
  EXPECT_GE(s.summary[0].mean_f1, s.summary[1].mean_f1);
  EXPECT_NE(render_sweep(s).find("| ring |"), std::string::npos);
}

TEST(Sweep, SinglePlanMatchesRun) {
  const auto cfg = fixtures::tiny_scenario(3, TopologyKind::ring, 4);
  const auto s = sweep({plan(cfg)});
  const auto r = run_simulation(plan(cfg));
  for (int id = 0; id < 3; ++id) {
    EXPECT_EQ(s.entries[0].result.record.summaries.at(id).param_fingerprints,
              r.record.summaries.at(id).param_fingerprints);
  }
}

TEST(Sweep, MixedDatasetsRejected) {
  auto a = fixtures::tiny_scenario(3, TopologyKind::ring);
  auto b = a;
  b.dataset.source = DatasetSource::mnist;
  b.dataset.synthetic.reset();
  EXPECT_THROW(sweep({plan(a), plan(b)}), ValidationError);
}
