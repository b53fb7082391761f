#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fedmesh/controller.hpp"
#include "fedmesh/node.hpp"

namespace fedmesh {

enum class SimTransport { loopback, memory };

struct SimPlan {
  ScenarioConfig scenario;
  double time_compression = 1.0;
  SimTransport transport = SimTransport::loopback;
  std::optional<EdgeProfile> edge_profile;
  net::Millis exchange_timeout{120000};
  net::Millis deadline{600000};
};

struct SimResult {
  RunRecord record;
  std::optional<RunReport> report;  // absent when the run never finished
};

// Every participant runs on its own thread in this process. Loopback mode
// uses real sockets on 127.0.0.1 (ports picked by the OS) and posts
// telemetry to an ingest server; memory mode skips the network entirely.
SimResult run_simulation(const SimPlan& plan);

struct SweepEntry {
  std::string label;  // scenario name / topology / seed
  TopologyKind topology;
  std::uint64_t seed;
  SimResult result;
};

struct SweepSummaryRow {
  TopologyKind topology;
  int runs = 0;
  double mean_f1 = 0.0;
  double mean_energy_j = 0.0;
  double mean_net_traffic_mb = 0.0;
};

struct SweepResult {
  std::vector<SweepEntry> entries;
  std::vector<SweepSummaryRow> summary;  // best mean F1 first
};

// Runs the plans in order. All plans must share one dataset source
// (ValidationError otherwise).
SweepResult sweep(const std::vector<SimPlan>& plans);
std::string render_sweep(const SweepResult& result);


}  // namespace fedmesh
