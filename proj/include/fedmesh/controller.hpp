#pragma once

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedmesh/endpoints.hpp"
#include "fedmesh/http.hpp"
#include "fedmesh/protocol.hpp"
#include "fedmesh/scenario.hpp"

namespace fedmesh {

enum class RunStatus { pending, running, complete, partial_failure, aborted };
std::string_view to_string(RunStatus status);
RunStatus run_status_from_string(std::string_view text);

struct RunRecord {
  ScenarioConfig scenario;
  std::map<int, std::vector<MetricReport>> reports;  // per node, ascending seq
  std::map<int, NodeSummary> summaries;
  std::map<int, std::string> integrity_warnings;
  std::vector<std::string> diagnostics;
  RunStatus status = RunStatus::pending;
  std::int64_t started_at_ms = 0;   // Unix epoch
  std::int64_t finished_at_ms = 0;
  std::uint64_t rejected_messages = 0;

  bool operator==(const RunRecord&) const = default;
};

enum class IngestResult { accepted, duplicate, rejected };

// Serialized per message by the caller. Reports dedupe on (node_id, seq),
// summaries on node_id. A summary whose energy disagrees with its power log
// is kept with an integrity warning.
IngestResult ingest(RunRecord& run, const MetricReport& report);
IngestResult ingest(RunRecord& run, const NodeSummary& summary);

struct ReportRow {
  std::string label;  // "P0".. or "Average"
  int node_id = -1;   // -1 for the average row
  double avg_f1 = 0.0;
  double avg_cpu_pct = 0.0;
  double avg_ram_pct = 0.0;
  double net_traffic_mb = 0.0;  // (sent + received) / 2^20
  double avg_power_w = 0.0;
  double energy_j = 0.0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_recv = 0;
};

struct RunReport {
  std::string scenario_name;
  RunStatus status = RunStatus::pending;
  std::vector<ReportRow> rows;  // node rows by id, then the average row

  const ReportRow& average() const { return rows.back(); }
};

enum class ReportFormat { csv, markdown, json };
ReportFormat report_format_from_string(std::string_view text);

// Throws StateError unless the run is COMPLETE or PARTIAL_FAILURE.
RunReport build_report(const RunRecord& run);
std::string render_report(const RunRecord& run, ReportFormat format);
std::string render_report(const RunReport& report, ReportFormat format);

nlohmann::json to_json(const RunRecord& run);
RunRecord run_record_from_json(const nlohmann::json& j);

// run_report.{csv,md,json}, run_record.json and power_log_node<K>.csv.
void write_run_outputs(const RunRecord& run, const std::filesystem::path& out_dir);

struct DistributionAck {
  bool ok = false;
  int status = 0;
  int attempts = 0;
  std::string error;
};

// Owns one RunRecord; every mutation goes through its mutex.
class Controller {
 public:
  explicit Controller(ScenarioConfig cfg);

  // POSTs each node its config (3 attempts each). All acks -> RUNNING; any
  // failure -> ABORTED with the failing nodes named in diagnostics. Throws
  // StateError unless PENDING.
  std::map<int, DistributionAck> distribute_config(
      RetryPolicy policy = {2, net::Millis(500), net::Millis(5000)});

  // PENDING -> RUNNING without distribution (in-process simulation).
  void start();

  IngestResult ingest(const MetricReport& report);
  IngestResult ingest(const NodeSummary& summary);

  // Blocks until COMPLETE/PARTIAL_FAILURE or the deadline; on deadline the
  // run becomes PARTIAL_FAILURE with whatever arrived.
  RunStatus wait(std::chrono::milliseconds deadline);
  // Closes a RUNNING run that cannot make progress any more.
  void finish_partial(const std::string& why);

  RunRecord snapshot() const;
  RunStatus status() const;

  // POST /metrics, POST /summary, GET /health.
  http::Response handle(const http::Request& req);
  std::unique_ptr<http::Server> serve_ingest_endpoints(net::TcpListener listener);
  std::unique_ptr<http::Server> serve_ingest_endpoints(const std::string& bind);

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  RunRecord run_;
};

}  // namespace fedmesh
