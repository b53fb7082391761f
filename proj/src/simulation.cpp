#include "fedmesh/simulation.hpp"

#include <algorithm>
#include <thread>

#include <fmt/format.h>

#include "fedmesh/log.hpp"
#include "fedmesh/topology.hpp"

namespace fedmesh {

namespace {

class DirectSink final : public TelemetrySink {
 public:
  explicit DirectSink(Controller& c) : controller_(c) {}
  bool post_metrics(const MetricReport& r) override {
    return controller_.ingest(r) != IngestResult::rejected;
  }
  bool post_summary(const NodeSummary& s) override {
    return controller_.ingest(s) != IngestResult::rejected;
  }

 private:
  Controller& controller_;
};

}  // namespace

SimResult run_simulation(const SimPlan& plan) {
  ScenarioConfig cfg = plan.scenario;
  const int n = cfg.node_count();
  const ScenarioData data = load_scenario_data(cfg);
  const TopologyGraph graph = build_topology(cfg.topology, n);

  std::vector<std::unique_ptr<PeerTransport>> transports;
  std::vector<std::unique_ptr<TelemetrySink>> sinks;
  std::unique_ptr<http::Server> ingest_server;
  std::unique_ptr<MemoryHub> hub;

  if (plan.transport == SimTransport::loopback) {
    std::vector<net::TcpListener> listeners;
    for (int id = 0; id < n; ++id) {
      listeners.push_back(net::TcpListener::bind({"127.0.0.1", 0}));
      cfg.participants[id].host = "127.0.0.1";
      cfg.participants[id].peer_port = listeners.back().port();
    }
    auto ingest_listener = net::TcpListener::bind({"127.0.0.1", 0});
    const std::string endpoint = fmt::format("http://127.0.0.1:{}", ingest_listener.port());
    for (auto& p : cfg.participants) p.metrics_endpoint = endpoint;
    for (int id = 0; id < n; ++id) {
      std::vector<TcpTransport::Peer> peers;
      for (int nb : graph.neighbors(id)) {
        peers.push_back({nb, {"127.0.0.1", cfg.participants[nb].peer_port}});
      }
      transports.push_back(std::make_unique<TcpTransport>(id, std::move(listeners[id]), peers));
      sinks.push_back(std::make_unique<HttpTelemetrySink>(endpoint));
    }
    // The controller must exist before the server starts handing it requests.
    auto controller = std::make_unique<Controller>(cfg);
    controller->start();
    ingest_server = controller->serve_ingest_endpoints(std::move(ingest_listener));

    std::vector<std::thread> threads;
    for (int id = 0; id < n; ++id) {
      NodeServices svc;
      svc.transport = transports[id].get();
      svc.telemetry = sinks[id].get();
      svc.data = &data;
      svc.time_compression = plan.time_compression;
      svc.edge_profile = plan.edge_profile;
      svc.exchange_timeout = plan.exchange_timeout;
      threads.emplace_back([&cfg, id, svc] { run_node(cfg, id, svc); });
    }
    for (auto& t : threads) t.join();
    if (controller->wait(net::Millis(2000)) == RunStatus::running) {
      controller->finish_partial("simulation ended without every summary");
    }
    ingest_server->stop();
    SimResult result{controller->snapshot(), std::nullopt};
    if (result.record.status != RunStatus::aborted) result.report = build_report(result.record);
    return result;
  }

  Controller controller(cfg);
  controller.start();
  hub = std::make_unique<MemoryHub>(n);
  for (int id = 0; id < n; ++id) {
    transports.push_back(hub->endpoint(id, graph.neighbors(id)));
    sinks.push_back(std::make_unique<DirectSink>(controller));
  }
  std::vector<std::thread> threads;
  for (int id = 0; id < n; ++id) {
    NodeServices svc;
    svc.transport = transports[id].get();
    svc.telemetry = sinks[id].get();
    svc.data = &data;
    svc.time_compression = plan.time_compression;
    svc.edge_profile = plan.edge_profile;
    svc.exchange_timeout = plan.exchange_timeout;
    threads.emplace_back([&cfg, id, svc] { run_node(cfg, id, svc); });
  }
  for (auto& t : threads) t.join();
  if (controller.status() == RunStatus::running) {
    controller.finish_partial("simulation ended without every summary");
  }
  SimResult result{controller.snapshot(), std::nullopt};
  if (result.record.status != RunStatus::aborted) result.report = build_report(result.record);
  return result;
}

SweepResult sweep(const std::vector<SimPlan>& plans) {
  SweepResult out;
  if (plans.empty()) return out;
  const auto source = plans.front().scenario.dataset.source;
  for (const auto& p : plans) {
    if (p.scenario.dataset.source != source) {
      throw ValidationError("sweep plans must use the same dataset");
    }
  }
  std::map<TopologyKind, SweepSummaryRow> acc;
  for (const auto& p : plans) {
    SweepEntry e;
    e.topology = p.scenario.topology.kind;
    e.seed = p.scenario.master_seed;
    e.label = fmt::format("{}/{}/seed{}", p.scenario.scenario_name, to_string(e.topology), e.seed);
    log_info("event=sweep_run label={}", e.label);
    e.result = run_simulation(p);
    auto& row = acc[e.topology];
    row.topology = e.topology;
    if (e.result.report) {
      const auto& avg = e.result.report->average();
      row.runs += 1;
      row.mean_f1 += avg.avg_f1;
      row.mean_energy_j += avg.energy_j;
      row.mean_net_traffic_mb += avg.net_traffic_mb;
    }
    out.entries.push_back(std::move(e));
  }
  for (auto& [k, row] : acc) {
    if (row.runs > 0) {
      row.mean_f1 /= row.runs;
      row.mean_energy_j /= row.runs;
      row.mean_net_traffic_mb /= row.runs;
    }
    out.summary.push_back(row);
  }
  std::stable_sort(out.summary.begin(), out.summary.end(),
                   [](const auto& a, const auto& b) { return a.mean_f1 > b.mean_f1; });
  return out;
}

std::string render_sweep(const SweepResult& result) {
  std::string out = "| Run | Status | Avg. F1-Score | Net Traffic (MB) | Energy (J) |\n|---|---|---:|---:|---:|\n";
  for (const auto& e : result.entries) {
    if (e.result.report) {
      const auto& avg = e.result.report->average();
      out += fmt::format("| {} | {} | {:.2f} | {:.1f} | {:.1f} |\n", e.label,
                         to_string(e.result.record.status), 100.0 * avg.avg_f1, avg.net_traffic_mb,
                         avg.energy_j);
    } else {
      out += fmt::format("| {} | {} | - | - | - |\n", e.label, to_string(e.result.record.status));
    }
  }
  out += "\n| Topology | Runs | Mean F1 | Mean Net Traffic (MB) | Mean Energy (J) |\n|---|---:|---:|---:|---:|\n";
  for (const auto& r : result.summary) {
    out += fmt::format("| {} | {} | {:.2f} | {:.1f} | {:.1f} |\n", to_string(r.topology), r.runs,
                       100.0 * r.mean_f1, r.mean_net_traffic_mb, r.mean_energy_j);
  }
  return out;
}

}  // namespace fedmesh
