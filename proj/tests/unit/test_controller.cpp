#include <gtest/gtest.h>

#include <filesystem>
#include <future>
#include <sstream>

#include <fmt/format.h>

#include "fedmesh/controller.hpp"
#include "support/fixtures.hpp"

using namespace fedmesh;
using namespace std::chrono_literals;

namespace {

NodeSummary summary_for(int id, double f1, std::uint64_t sent) {
  NodeSummary s;
  s.node_id = id;
  s.f1_final = f1;
  s.f1_per_round = {f1};
  s.avg_cpu_pct = 20 + id;
  s.avg_ram_pct = 33;
  s.total_bytes_sent = sent;
  s.total_bytes_recv = sent;
  s.power_log = {{0, 5, 0.6, 3.0}, {1000, 5, 0.6, 3.0}};
  s.energy_j = 3.0;
  s.avg_power_w = 3.0;
  return s;
}

RunRecord running(int n) {
  RunRecord r;
  r.scenario = fixtures::tiny_scenario(n, TopologyKind::fully);
  r.status = RunStatus::running;
  return r;
}

MetricReport report(int node, std::uint64_t seq) {
  MetricReport m;
  m.node_id = node;
  m.seq = seq;
  m.cpu_pct = static_cast<double>(seq);
  return m;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    out.push_back(cells);
  }
  return out;
}

}  // namespace

TEST(Ingest, DedupeAndOrdering) {
  auto run = running(4);
  EXPECT_EQ(ingest(run, report(1, 5)), IngestResult::accepted);
  EXPECT_EQ(ingest(run, report(1, 2)), IngestResult::accepted);
  const auto before = run;
  EXPECT_EQ(ingest(run, report(1, 5)), IngestResult::duplicate);
  EXPECT_EQ(run, before);
  EXPECT_EQ(run.reports[1].front().seq, 2u);
  EXPECT_EQ(ingest(run, report(9, 1)), IngestResult::rejected);
  EXPECT_EQ(run.rejected_messages, 1u);
}

TEST(Ingest, CompletesOnLastSummary) {
  auto run = running(4);
  for (int id = 0; id < 3; ++id) {
    ingest(run, summary_for(id, 0.9, 100));
    EXPECT_EQ(run.status, RunStatus::running);
  }
  EXPECT_EQ(ingest(run, summary_for(3, 0.9, 100)), IngestResult::accepted);
  EXPECT_EQ(run.status, RunStatus::complete);
  EXPECT_EQ(ingest(run, report(0, 1)), IngestResult::rejected);
}

TEST(Ingest, FailedSummaryGivesPartialFailure) {
  auto run = running(2);
  ingest(run, summary_for(0, 0.9, 1));
  auto bad = summary_for(1, 0.0, 1);
  bad.status = "failed";
  ingest(run, bad);
  EXPECT_EQ(run.status, RunStatus::partial_failure);
}

TEST(Ingest, EnergyMismatchWarns) {
  auto run = running(2);
  auto s = summary_for(0, 0.9, 1);
  s.energy_j = 3.0 * (1 + 1e-6);
  EXPECT_EQ(ingest(run, s), IngestResult::accepted);
  EXPECT_EQ(run.integrity_warnings.count(0), 1u);
  EXPECT_EQ(run.summaries.count(0), 1u);
}

TEST(Ingest, RejectedWhenNotRunning) {
  RunRecord run;
  run.scenario = fixtures::tiny_scenario(2, TopologyKind::fully);
  EXPECT_EQ(ingest(run, report(0, 1)), IngestResult::rejected);
}

TEST(Ingest, Commutative) {
  std::vector<std::variant<MetricReport, NodeSummary>> msgs;
  for (int id = 0; id < 3; ++id) {
    for (std::uint64_t s = 1; s <= 4; ++s) msgs.push_back(report(id, s));
    msgs.push_back(summary_for(id, 0.5 + id * 0.1, 10));
  }
  // Summaries last so every report lands while RUNNING.
  auto apply = [&](std::vector<std::size_t> order) {
    auto run = running(3);
    std::stable_partition(order.begin(), order.end(),
                          [&](std::size_t i) { return std::holds_alternative<MetricReport>(msgs[i]); });
    for (auto i : order) std::visit([&](const auto& m) { ingest(run, m); }, msgs[i]);
    run.finished_at_ms = 0;
    return run;
  };
  std::vector<std::size_t> order(msgs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto ref = apply(order);
  EXPECT_EQ(ref.status, RunStatus::complete);
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    rng.shuffle(std::span(order));
    EXPECT_EQ(apply(order), ref);
  }
}

TEST(Report, RowsAverageAndTraffic) {
  auto run = running(4);
  EXPECT_THROW(build_report(run), StateError);
  ingest(run, summary_for(0, 0.8, 3 * 1048576));
  for (int id = 1; id < 4; ++id) ingest(run, summary_for(id, 0.9, 1048576));
  const auto rep = build_report(run);
  ASSERT_EQ(rep.rows.size(), 5u);
  EXPECT_EQ(rep.rows[0].label, "P0");
  EXPECT_EQ(rep.average().label, "Average");
  EXPECT_NEAR(rep.average().avg_f1, (0.8 + 2.7) / 4, 1e-12);
  EXPECT_DOUBLE_EQ(rep.rows[0].net_traffic_mb, 6.0);
  EXPECT_DOUBLE_EQ(rep.rows[1].net_traffic_mb, 2.0);
  EXPECT_DOUBLE_EQ(rep.rows[0].net_traffic_mb / rep.rows[1].net_traffic_mb, 3.0);
}

TEST(Report, CsvAndJsonAgree) {
  auto run = running(4);
  for (int id = 0; id < 4; ++id) ingest(run, summary_for(id, 0.8123 + id * 0.01, 123456 * (id + 1)));
  const auto csv = csv_rows(render_report(run, ReportFormat::csv));
  const auto js = nlohmann::json::parse(render_report(run, ReportFormat::json));
  ASSERT_EQ(csv.size(), 6u);
  EXPECT_EQ(csv[0][0], "Node");
  EXPECT_EQ(csv[0][1], "Avg. F1-Score");
  EXPECT_EQ(csv[0][4], "Net Traffic (MB)");
  const char* keys[] = {"avg_f1_pct", "cpu_pct", "ram_pct", "net_traffic_mb", "power_w", "energy_j"};
  for (std::size_t r = 0; r < 5; ++r) {
    EXPECT_EQ(csv[r + 1][0], js["rows"][r]["node"].get<std::string>());
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_DOUBLE_EQ(std::stod(csv[r + 1][c + 1]), js["rows"][r][keys[c]].get<double>());
    }
  }
  const auto md = render_report(run, ReportFormat::markdown);
  EXPECT_NE(md.find("| Average |"), std::string::npos);
  EXPECT_THROW(report_format_from_string("xml"), ValidationError);
}

TEST(RunRecordJson, RoundTripAndOutputs) {
  auto run = running(2);
  ingest(run, report(0, 1));
  ingest(run, summary_for(0, 0.7, 10));
  auto bad = summary_for(1, 0.6, 10);
  bad.energy_j = 99;
  ingest(run, bad);
  run.diagnostics.push_back("note");
  EXPECT_EQ(run_record_from_json(to_json(run)), run);
  EXPECT_THROW(run_record_from_json(nlohmann::json{{"status", "COMPLETE"}}), ValidationError);

  const auto dir = std::filesystem::temp_directory_path() / "fedmesh_ctl_out";
  std::filesystem::remove_all(dir);
  write_run_outputs(run, dir);
  for (const char* f : {"run_record.json", "run_report.csv", "run_report.md", "run_report.json",
                        "power_log_node0.csv", "power_log_node1.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  std::filesystem::remove_all(dir);
}

TEST(ControllerHttp, Endpoints) {
  Controller c(fixtures::tiny_scenario(2, TopologyKind::fully));
  c.start();
  auto server = c.serve_ingest_endpoints("127.0.0.1:0");
  const net::HostPort at{"127.0.0.1", server->port()};
  auto h = http::send_request(at, "GET", "/health", "", 2000ms);
  EXPECT_EQ(h.status, 200);
  EXPECT_EQ(h.body, "ok");
  EXPECT_EQ(http::send_request(at, "POST", "/metrics", to_json(report(0, 1)).dump(), 2000ms).status, 200);
  EXPECT_EQ(c.snapshot().reports[0].size(), 1u);
  EXPECT_EQ(http::send_request(at, "POST", "/metrics", to_json(report(0, 1)).dump(), 2000ms).status, 200);
  EXPECT_EQ(c.snapshot().reports[0].size(), 1u);
  const auto before = c.snapshot();
  EXPECT_EQ(http::send_request(at, "POST", "/metrics", "{oops", 2000ms).status, 400);
  EXPECT_EQ(http::send_request(at, "POST", "/summary", to_json(summary_for(7, 1, 1)).dump(), 2000ms).status, 400);
  EXPECT_EQ(c.snapshot().reports, before.reports);
  EXPECT_EQ(c.snapshot().summaries.size(), 0u);
  EXPECT_EQ(http::send_request(at, "GET", "/nowhere", "", 2000ms).status, 404);
  server->stop();
}

TEST(ControllerHttp, SummaryRetryStoredOnce) {
  Controller c(fixtures::tiny_scenario(2, TopologyKind::fully));
  c.start();
  auto server = c.serve_ingest_endpoints("127.0.0.1:0");
  const auto ep = fmt::format("http://127.0.0.1:{}", server->port());
  EXPECT_TRUE(post_summary(ep, summary_for(0, 0.5, 1)).acked);
  EXPECT_TRUE(post_summary(ep, summary_for(0, 0.5, 1)).acked);
  EXPECT_EQ(c.snapshot().summaries.size(), 1u);
  server->stop();
}

TEST(ControllerDistribute, AllAckThenDuplicateRejected) {
  auto cfg = fixtures::tiny_scenario(4, TopologyKind::ring);
  std::vector<std::future<ConfigAssignment>> nodes;
  for (int id = 0; id < 4; ++id) {
    auto l = net::TcpListener::bind({"127.0.0.1", 0});
    cfg.participants[id].config_port = l.port();
    nodes.push_back(std::async(std::launch::async, [l = std::move(l)]() mutable {
      return serve_config_once(std::move(l), 5000ms);
    }));
  }
  Controller c(cfg);
  const auto acks = c.distribute_config();
  EXPECT_EQ(acks.size(), 4u);
  for (auto& [id, a] : acks) EXPECT_TRUE(a.ok) << id << a.error;
  EXPECT_EQ(c.status(), RunStatus::running);
  for (int id = 0; id < 4; ++id) EXPECT_EQ(nodes[id].get().node_id, id);
  EXPECT_THROW(c.distribute_config(), StateError);
}

TEST(ControllerDistribute, RefusingNodeAborts) {
  auto cfg = fixtures::tiny_scenario(4, TopologyKind::ring);
  std::vector<std::future<ConfigAssignment>> nodes;
  for (int id = 0; id < 4; ++id) {
    if (id == 2) {
      cfg.participants[id].config_port = net::probe_free_port();
      continue;
    }
    auto l = net::TcpListener::bind({"127.0.0.1", 0});
    cfg.participants[id].config_port = l.port();
    nodes.push_back(std::async(std::launch::async, [l = std::move(l)]() mutable {
      return serve_config_once(std::move(l), 5000ms);
    }));
  }
  Controller c(cfg);
  const auto acks = c.distribute_config({2, 50ms, 1000ms});
  EXPECT_FALSE(acks.at(2).ok);
  EXPECT_EQ(acks.at(2).attempts, 3);
  EXPECT_EQ(c.status(), RunStatus::aborted);
  const auto run = c.snapshot();
  ASSERT_FALSE(run.diagnostics.empty());
  EXPECT_NE(run.diagnostics[0].find("node 2"), std::string::npos);
  for (auto& f : nodes) f.get();
}

TEST(ControllerWait, DeadlineGivesPartial) {
  Controller c(fixtures::tiny_scenario(2, TopologyKind::fully));
  c.start();
  c.ingest(summary_for(0, 0.5, 1));
  EXPECT_EQ(c.wait(100ms), RunStatus::partial_failure);
  EXPECT_EQ(build_report(c.snapshot()).rows.size(), 2u);
}
