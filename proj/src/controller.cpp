#include "fedmesh/controller.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "fedmesh/log.hpp"
#include "fedmesh/scenario_json.hpp"
#include "fedmesh/telemetry.hpp"

namespace fedmesh {

using nlohmann::json;

namespace {

std::int64_t epoch_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

bool known_node(const RunRecord& run, int node_id) {
  return node_id >= 0 && node_id < run.scenario.node_count();
}

void settle(RunRecord& run) {
  if (run.status != RunStatus::running) return;
  if (static_cast<int>(run.summaries.size()) < run.scenario.node_count()) return;
  const bool any_failed = std::any_of(run.summaries.begin(), run.summaries.end(),
                                      [](const auto& kv) { return kv.second.failed(); });
  run.status = any_failed ? RunStatus::partial_failure : RunStatus::complete;
  run.finished_at_ms = epoch_ms();
}

}  // namespace

std::string_view to_string(RunStatus status) {
  switch (status) {
    case RunStatus::pending: return "PENDING";
    case RunStatus::running: return "RUNNING";
    case RunStatus::complete: return "COMPLETE";
    case RunStatus::partial_failure: return "PARTIAL_FAILURE";
    case RunStatus::aborted: return "ABORTED";
  }
  return "?";
}

RunStatus run_status_from_string(std::string_view text) {
  for (auto s : {RunStatus::pending, RunStatus::running, RunStatus::complete,
                 RunStatus::partial_failure, RunStatus::aborted}) {
    if (to_string(s) == text) return s;
  }
  throw ValidationError(fmt::format("unknown run status '{}'", text));
}

IngestResult ingest(RunRecord& run, const MetricReport& report) {
  if (run.status != RunStatus::running || !known_node(run, report.node_id)) {
    ++run.rejected_messages;
    return IngestResult::rejected;
  }
  auto& list = run.reports[report.node_id];
  auto pos = std::lower_bound(list.begin(), list.end(), report.seq,
                              [](const MetricReport& r, std::uint64_t seq) { return r.seq < seq; });
  if (pos != list.end() && pos->seq == report.seq) return IngestResult::duplicate;
  list.insert(pos, report);
  return IngestResult::accepted;
}

IngestResult ingest(RunRecord& run, const NodeSummary& summary) {
  if (run.status != RunStatus::running || !known_node(run, summary.node_id)) {
    ++run.rejected_messages;
    return IngestResult::rejected;
  }
  if (run.summaries.count(summary.node_id)) return IngestResult::duplicate;
  if (!summary_energy_consistent(summary)) {
    run.integrity_warnings[summary.node_id] = fmt::format(
        "energy_j {} disagrees with integrated power log", summary.energy_j);
  }
  run.summaries.emplace(summary.node_id, summary);
  settle(run);
  return IngestResult::accepted;
}

ReportFormat report_format_from_string(std::string_view text) {
  if (text == "csv") return ReportFormat::csv;
  if (text == "md" || text == "markdown") return ReportFormat::markdown;
  if (text == "json") return ReportFormat::json;
  throw ValidationError(fmt::format("unknown report format '{}'", text));
}

RunReport build_report(const RunRecord& run) {
  if (run.status != RunStatus::complete && run.status != RunStatus::partial_failure) {
    throw StateError(fmt::format("report not ready: run is {}", to_string(run.status)));
  }
  RunReport out;
  out.scenario_name = run.scenario.scenario_name;
  out.status = run.status;
  ReportRow avg;
  avg.label = "Average";
  for (const auto& [id, s] : run.summaries) {
    ReportRow row;
    row.label = fmt::format("P{}", id);
    row.node_id = id;
    row.avg_f1 = s.f1_final;
    row.avg_cpu_pct = s.avg_cpu_pct;
    row.avg_ram_pct = s.avg_ram_pct;
    row.bytes_sent = s.total_bytes_sent;
    row.bytes_recv = s.total_bytes_recv;
    row.net_traffic_mb = static_cast<double>(s.total_bytes_sent + s.total_bytes_recv) / 1048576.0;
    row.avg_power_w = s.avg_power_w;
    row.energy_j = s.energy_j;
    out.rows.push_back(row);
  }
  if (!out.rows.empty()) {
    const double n = static_cast<double>(out.rows.size());
    for (const auto& r : out.rows) {
      avg.avg_f1 += r.avg_f1 / n;
      avg.avg_cpu_pct += r.avg_cpu_pct / n;
      avg.avg_ram_pct += r.avg_ram_pct / n;
      avg.net_traffic_mb += r.net_traffic_mb / n;
      avg.avg_power_w += r.avg_power_w / n;
      avg.energy_j += r.energy_j / n;
      avg.bytes_sent += r.bytes_sent;
      avg.bytes_recv += r.bytes_recv;
    }
    avg.bytes_sent = static_cast<std::uint64_t>(std::llround(static_cast<double>(avg.bytes_sent) / n));
    avg.bytes_recv = static_cast<std::uint64_t>(std::llround(static_cast<double>(avg.bytes_recv) / n));
  }
  out.rows.push_back(avg);
  return out;
}

namespace {

struct Column {
  const char* title;
  const char* key;
  int decimals;
  double (*get)(const ReportRow&);
};

// F1 is shown as a percentage, like the usual results tables.
const Column kColumns[] = {
    {"Avg. F1-Score", "avg_f1_pct", 2, [](const ReportRow& r) { return 100.0 * r.avg_f1; }},
    {"CPU Usage (%)", "cpu_pct", 1, [](const ReportRow& r) { return r.avg_cpu_pct; }},
    {"RAM Usage (%)", "ram_pct", 1, [](const ReportRow& r) { return r.avg_ram_pct; }},
    {"Net Traffic (MB)", "net_traffic_mb", 1, [](const ReportRow& r) { return r.net_traffic_mb; }},
    {"Power (W)", "power_w", 2, [](const ReportRow& r) { return r.avg_power_w; }},
    {"Energy (J)", "energy_j", 1, [](const ReportRow& r) { return r.energy_j; }},
};

std::string cell(const Column& c, const ReportRow& r) {
  return fmt::format("{:.{}f}", c.get(r), c.decimals);
}

}  // namespace

std::string render_report(const RunReport& report, ReportFormat format) {
  std::string out;
  switch (format) {
    case ReportFormat::csv: {
      out = "Node";
      for (const auto& c : kColumns) out += fmt::format(",{}", c.title);
      out += '\n';
      for (const auto& r : report.rows) {
        out += r.label;
        for (const auto& c : kColumns) out += "," + cell(c, r);
        out += '\n';
      }
      break;
    }
    case ReportFormat::markdown: {
      out = fmt::format("## {} ({})\n\n| Node |", report.scenario_name, to_string(report.status));
      for (const auto& c : kColumns) out += fmt::format(" {} |", c.title);
      out += "\n|---|";
      for (std::size_t i = 0; i < std::size(kColumns); ++i) out += "---:|";
      out += '\n';
      for (const auto& r : report.rows) {
        out += fmt::format("| {} |", r.label);
        for (const auto& c : kColumns) out += fmt::format(" {} |", cell(c, r));
        out += '\n';
      }
      break;
    }
    case ReportFormat::json: {
      json rows = json::array();
      for (const auto& r : report.rows) {
        json row = {{"node", r.label}};
        // Values are the same rounded decimals the text formats print.
        for (const auto& c : kColumns) row[c.key] = std::stod(cell(c, r));
        rows.push_back(row);
      }
      out = json{{"scenario", report.scenario_name},
                 {"status", to_string(report.status)},
                 {"rows", rows}}
                .dump(2) +
            "\n";
      break;
    }
  }
  return out;
}

std::string render_report(const RunRecord& run, ReportFormat format) {
  return render_report(build_report(run), format);
}

json to_json(const RunRecord& run) {
  json reports = json::object();
  for (const auto& [id, list] : run.reports) {
    json arr = json::array();
    for (const auto& r : list) arr.push_back(to_json(r));
    reports[std::to_string(id)] = arr;
  }
  json summaries = json::array();
  for (const auto& [id, s] : run.summaries) summaries.push_back(to_json(s));
  json warnings = json::object();
  for (const auto& [id, w] : run.integrity_warnings) warnings[std::to_string(id)] = w;
  return {{"scenario", scenario_to_json(run.scenario)},
          {"status", to_string(run.status)},
          {"started_at_ms", run.started_at_ms},
          {"finished_at_ms", run.finished_at_ms},
          {"rejected_messages", run.rejected_messages},
          {"diagnostics", run.diagnostics},
          {"integrity_warnings", warnings},
          {"reports", reports},
          {"summaries", summaries}};
}

RunRecord run_record_from_json(const json& j) {
  try {
    RunRecord run;
    run.scenario = scenario_from_json(j.at("scenario"));
    run.status = run_status_from_string(j.at("status").get<std::string>());
    run.started_at_ms = j.value("started_at_ms", std::int64_t{0});
    run.finished_at_ms = j.value("finished_at_ms", std::int64_t{0});
    run.rejected_messages = j.value("rejected_messages", std::uint64_t{0});
    run.diagnostics = j.value("diagnostics", std::vector<std::string>{});
    if (j.contains("integrity_warnings")) {
      for (const auto& [k, v] : j.at("integrity_warnings").items()) {
        run.integrity_warnings[std::stoi(k)] = v.get<std::string>();
      }
    }
    for (const auto& [k, arr] : j.at("reports").items()) {
      auto& list = run.reports[std::stoi(k)];
      for (const auto& r : arr) list.push_back(metric_report_from_json(r));
    }
    for (const auto& s : j.at("summaries")) {
      auto summary = node_summary_from_json(s);
      run.summaries.emplace(summary.node_id, std::move(summary));
    }
    return run;
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("run record: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    throw ValidationError(fmt::format("run record: {}", e.what()));
  }
}

void write_run_outputs(const RunRecord& run, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream f(out_dir / name);
    if (!f) throw Error(fmt::format("{}: cannot open for writing", (out_dir / name).string()));
    f << text;
  };
  write("run_record.json", to_json(run).dump(2) + "\n");
  if (run.status == RunStatus::complete || run.status == RunStatus::partial_failure) {
    const auto report = build_report(run);
    write("run_report.csv", render_report(report, ReportFormat::csv));
    write("run_report.md", render_report(report, ReportFormat::markdown));
    write("run_report.json", render_report(report, ReportFormat::json));
  }
  for (const auto& [id, s] : run.summaries) {
    write_power_log(s.power_log, out_dir / fmt::format("power_log_node{}.csv", id));
  }
}

Controller::Controller(ScenarioConfig cfg) { run_.scenario = std::move(cfg); }

void Controller::start() {
  std::lock_guard lock(mu_);
  if (run_.status != RunStatus::pending) {
    throw StateError(fmt::format("cannot start a run that is {}", to_string(run_.status)));
  }
  run_.status = RunStatus::running;
  run_.started_at_ms = epoch_ms();
}

std::map<int, DistributionAck> Controller::distribute_config(RetryPolicy policy) {
  ScenarioConfig cfg;
  {
    std::lock_guard lock(mu_);
    if (run_.status != RunStatus::pending) {
      throw StateError(fmt::format("scenario already distributed (run is {})", to_string(run_.status)));
    }
    cfg = run_.scenario;
  }
  std::map<int, DistributionAck> acks;
  std::vector<std::string> failures;
  for (const auto& p : cfg.participants) {
    const std::string endpoint = fmt::format("http://{}:{}", p.host, p.config_port);
    const auto outcome = post_json(endpoint, "/config", make_config_body(cfg, p.node_id), policy);
    DistributionAck ack{outcome.acked, outcome.status, outcome.attempts, outcome.error};
    if (!ack.ok) {
      failures.push_back(fmt::format("node {} ({}): {}", p.node_id, endpoint,
                                     ack.error.empty() ? "no acknowledgement" : ack.error));
    }
    acks[p.node_id] = ack;
  }
  std::lock_guard lock(mu_);
  if (failures.empty()) {
    run_.status = RunStatus::running;
    run_.started_at_ms = epoch_ms();
  } else {
    run_.status = RunStatus::aborted;
    run_.finished_at_ms = epoch_ms();
    for (auto& f : failures) run_.diagnostics.push_back("distribution failed: " + f);
  }
  cv_.notify_all();
  return acks;
}

IngestResult Controller::ingest(const MetricReport& report) {
  std::lock_guard lock(mu_);
  return fedmesh::ingest(run_, report);
}

IngestResult Controller::ingest(const NodeSummary& summary) {
  IngestResult res;
  {
    std::lock_guard lock(mu_);
    res = fedmesh::ingest(run_, summary);
  }
  cv_.notify_all();
  return res;
}

RunStatus Controller::wait(std::chrono::milliseconds deadline) {
  std::unique_lock lock(mu_);
  const bool done = cv_.wait_for(lock, deadline, [this] { return run_.status != RunStatus::running; });
  if (!done) {
    run_.status = RunStatus::partial_failure;
    run_.finished_at_ms = epoch_ms();
    run_.diagnostics.push_back(fmt::format("deadline reached with {} of {} summaries",
                                           run_.summaries.size(), run_.scenario.node_count()));
  }
  return run_.status;
}

void Controller::finish_partial(const std::string& why) {
  std::lock_guard lock(mu_);
  if (run_.status != RunStatus::running) return;
  run_.status = RunStatus::partial_failure;
  run_.finished_at_ms = epoch_ms();
  run_.diagnostics.push_back(why);
  cv_.notify_all();
}

RunRecord Controller::snapshot() const {
  std::lock_guard lock(mu_);
  return run_;
}

RunStatus Controller::status() const {
  std::lock_guard lock(mu_);
  return run_.status;
}

http::Response Controller::handle(const http::Request& req) {
  if (req.target == "/health") {
    if (req.method != "GET") return {405, "method not allowed", "text/plain"};
    return {200, "ok", "text/plain"};
  }
  if (req.target != "/metrics" && req.target != "/summary") {
    return {404, R"({"status":"error","error":"not found"})"};
  }
  if (req.method != "POST") return {405, R"({"status":"error","error":"method not allowed"})"};
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::parse_error& e) {
    return {400, json{{"status", "error"}, {"error", e.what()}}.dump()};
  }
  try {
    IngestResult res;
    if (req.target == "/metrics") {
      res = ingest(metric_report_from_json(body));
    } else {
      res = ingest(node_summary_from_json(body));
    }
    if (res == IngestResult::rejected) {
      return {400, R"({"status":"error","error":"rejected: unknown node or run not running"})"};
    }
    return {200, json{{"status", res == IngestResult::duplicate ? "duplicate" : "ok"}}.dump()};
  } catch (const Error& e) {
    return {400, json{{"status", "error"}, {"error", e.what()}}.dump()};
  }
}

std::unique_ptr<http::Server> Controller::serve_ingest_endpoints(net::TcpListener listener) {
  return std::make_unique<http::Server>(std::move(listener),
                                        [this](const http::Request& r) { return handle(r); });
}

std::unique_ptr<http::Server> Controller::serve_ingest_endpoints(const std::string& bind) {
  return serve_ingest_endpoints(net::TcpListener::bind(net::parse_host_port(bind)));
}

}  // namespace fedmesh
