#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <json.hpp>

#include "fedmesh/controller.hpp"
#include "fedmesh/dataset.hpp"
#include "fedmesh/endpoints.hpp"
#include "fedmesh/log.hpp"
#include "fedmesh/node.hpp"
#include "fedmesh/simulation.hpp"
#include "fedmesh/topology.hpp"
#include "fedmesh/transport.hpp"

namespace fs = std::filesystem;
using namespace fedmesh;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRunFailed = 2, kTimeout = 3 };

int exit_for(RunStatus s) { return s == RunStatus::complete ? kOk : kRunFailed; }

void print_violations(const std::vector<Violation>& vs) {
  for (const auto& v : vs) std::cerr << "invalid: " << v.field << ": " << v.message << "\n";
}

std::optional<EdgeProfile> parse_edge_profile(const std::string& text) {
  if (text.empty()) return std::nullopt;
  EdgeProfile p;
  char comma = 0;
  std::istringstream in(text);
  if (!(in >> p.train_s >> comma >> p.exchange_s) || comma != ',' || p.train_s < 0 || p.exchange_s < 0) {
    throw ValidationError(fmt::format("--edge-profile expects TRAIN_S,EXCHANGE_S, got '{}'", text));
  }
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw Error(fmt::format("{}: cannot open for writing", path.string()));
  f << text;
}

struct SimArgs {
  std::string scenario;
  std::string out = "out";
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> topologies;
  double time_compression = 1.0;
  std::string edge_profile;
  bool in_memory = false;
};

int cmd_sim(const SimArgs& a) {
  ScenarioConfig base = load_scenario_file(a.scenario);
  const auto profile = parse_edge_profile(a.edge_profile);
  if (a.time_compression < 1.0) throw ValidationError("--time-compression must be >= 1");

  std::vector<TopologyKind> kinds;
  for (const auto& t : a.topologies) kinds.push_back(topology_kind_from_string(t));
  if (kinds.empty()) kinds.push_back(base.topology.kind);
  std::vector<std::uint64_t> seeds = a.seeds;
  if (seeds.empty()) seeds.push_back(base.master_seed);

  std::vector<SimPlan> plans;
  for (auto kind : kinds) {
    for (auto seed : seeds) {
      ScenarioConfig cfg = base;
      if (!a.seeds.empty()) {
        cfg.master_seed = seed;
        cfg.topology.seed = seed;
      }
      if (kind != cfg.topology.kind) {
        cfg.topology.kind = kind;
        if (kind == TopologyKind::random && !cfg.topology.edge_probability) cfg.topology.edge_probability = 0.5;
        if (kind == TopologyKind::star && !cfg.topology.hub_id) cfg.topology.hub_id = 0;
      }
      if (auto vs = validate_scenario(cfg); !vs.empty()) {
        print_violations(vs);
        return kUsage;
      }
      SimPlan plan;
      plan.scenario = cfg;
      plan.time_compression = a.time_compression;
      plan.edge_profile = profile;
      plan.transport = a.in_memory ? SimTransport::memory : SimTransport::loopback;
      plans.push_back(std::move(plan));
    }
  }

  const auto result = sweep(plans);
  const fs::path out(a.out);
  bool all_complete = true;
  if (result.entries.size() == 1) {
    write_run_outputs(result.entries[0].result.record, out);
  } else {
    for (const auto& e : result.entries) {
      write_run_outputs(e.result.record,
                        out / fmt::format("{}_seed{}", to_string(e.topology), e.seed));
    }
    write_text(out / "sweep.md", render_sweep(result));
  }
  for (const auto& e : result.entries) {
    all_complete = all_complete && e.result.record.status == RunStatus::complete;
    for (const auto& d : e.result.record.diagnostics) log_warn("run={} diagnostic=\"{}\"", e.label, d);
  }
  if (result.entries.size() == 1 && result.entries[0].result.report) {
    std::cout << render_report(*result.entries[0].result.report, ReportFormat::markdown);
  } else {
    std::cout << render_sweep(result);
  }
  return all_complete ? kOk : kRunFailed;
}

struct NodeArgs {
  std::string bind;
  double config_timeout_s = 600;
  std::string resources = "simulated";
  double time_compression = 1.0;
  std::string edge_profile;
};

int cmd_node(const NodeArgs& a) {
  ResourceMode mode;
  if (a.resources == "simulated") mode = ResourceMode::simulated;
  else if (a.resources == "os") mode = ResourceMode::os;
  else throw ValidationError(fmt::format("unknown --resources '{}'", a.resources));
  const auto profile = parse_edge_profile(a.edge_profile);

  ConfigAssignment cfg_msg;
  try {
    cfg_msg = serve_config_once(a.bind, net::Millis(static_cast<long>(a.config_timeout_s * 1000)));
  } catch (const TimeoutError& e) {
    std::cerr << "timeout: " << e.what() << "\n";
    return kTimeout;
  }
  const ScenarioConfig& cfg = cfg_msg.scenario;
  const int me = cfg_msg.node_id;
  const auto& self = cfg.participant(me);
  log_info("event=configured node={} scenario={}", me, cfg.scenario_name);

  const TopologyGraph graph = build_topology(cfg.topology, cfg.node_count());
  std::vector<TcpTransport::Peer> peers;
  for (int nb : graph.neighbors(me)) {
    const auto& p = cfg.participant(nb);
    peers.push_back({nb, {p.host, p.peer_port}});
  }
  TcpTransport transport(me, net::TcpListener::bind({self.host, self.peer_port}), peers);
  HttpTelemetrySink sink(self.metrics_endpoint);

  NodeServices svc;
  svc.transport = &transport;
  svc.telemetry = &sink;
  svc.time_compression = a.time_compression;
  svc.edge_profile = profile;
  svc.resources = mode;
  const NodeSummary summary = run_node(cfg, me, svc);
  if (summary.failed()) {
    std::cerr << "node " << me << " failed: " << summary.diagnostic << "\n";
    return kRunFailed;
  }
  std::cout << fmt::format("node {} done: f1={:.4f} energy_j={:.1f}\n", me, summary.f1_final, summary.energy_j);
  return kOk;
}

struct ControllerArgs {
  std::string scenario;
  std::string bind = "127.0.0.1:8080";
  std::string out = "out";
  double deadline_s = 1800;
};

int cmd_controller(const ControllerArgs& a) {
  ScenarioConfig cfg = load_scenario_file(a.scenario);
  const auto bind = net::parse_host_port(a.bind);
  // Participants without their own metrics endpoint report here.
  for (auto& p : cfg.participants) {
    if (p.metrics_endpoint.empty()) p.metrics_endpoint = "http://" + bind.str();
  }
  Controller controller(cfg);
  auto server = controller.serve_ingest_endpoints(net::TcpListener::bind(bind));
  const auto acks = controller.distribute_config({2, net::Millis(1000), net::Millis(5000)});
  for (const auto& [id, ack] : acks) {
    if (!ack.ok) log_error("event=distribution_failed node={} attempts={} error=\"{}\"", id, ack.attempts, ack.error);
  }
  if (controller.status() == RunStatus::aborted) {
    write_run_outputs(controller.snapshot(), a.out);
    std::cerr << "run aborted: configuration could not be distributed\n";
    return kRunFailed;
  }
  controller.wait(net::Millis(static_cast<long>(a.deadline_s * 1000)));
  server->stop();
  const RunRecord run = controller.snapshot();
  write_run_outputs(run, a.out);
  for (const auto& d : run.diagnostics) log_warn("diagnostic=\"{}\"", d);
  std::cout << render_report(run, ReportFormat::markdown);
  return exit_for(run.status);
}

int cmd_report(const std::string& record_path, const std::string& format) {
  const auto fmt_kind = report_format_from_string(format);
  std::ifstream f(record_path);
  if (!f) throw Error(fmt::format("{}: file not found", record_path));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", record_path, e.what()), e.byte);
  }
  std::cout << render_report(run_record_from_json(j), fmt_kind);
  return kOk;
}

int cmd_dataset_inspect(const std::string& dir) {
  static const char* kFiles[] = {"train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                                 "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"};
  bool ok = true;
  for (const char* name : kFiles) {
    try {
      read_idx_file(fs::path(dir) / name);
    } catch (const std::exception& e) {
      std::cerr << name << ": " << e.what() << "\n";
      ok = false;
    }
  }
  if (!ok) return kUsage;
  const auto split = load_idx_directory(dir);
  std::cout << fmt::format("{} train / {} test, {}x{}\n", split.train.size(), split.test.size(),
                           split.image_rows, split.image_cols);
  std::cout << fmt::format("train labels: {}\n", fmt::join(split.train.class_histogram(), " "));
  std::cout << fmt::format("test labels:  {}\n", fmt::join(split.test.class_histogram(), " "));
  return kOk;
}

int cmd_dataset_synth(const std::string& spec_path, const std::string& out) {
  std::ifstream f(spec_path);
  if (!f) throw Error(fmt::format("{}: file not found", spec_path));
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", spec_path, e.what()), e.byte);
  }
  SyntheticSpec s;
  std::uint64_t seed = 0;
  try {
    s.n_samples = j.at("n_samples").get<int>();
    s.n_features = j.at("n_features").get<int>();
    s.n_classes = j.at("n_classes").get<int>();
    s.cluster_stddev = j.value("cluster_stddev", s.cluster_stddev);
    seed = j.value("seed", std::uint64_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", spec_path, e.what()));
  }
  if (s.n_samples <= 0 || s.n_features <= 0 || s.n_classes < 2 || s.cluster_stddev < 0) {
    throw ValidationError(fmt::format("{}: synthetic spec out of range", spec_path));
  }
  const Dataset ds = gen_synthetic(s, seed);
  if (auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  write_dataset_csv(ds, out);
  std::cout << fmt::format("{} samples, {} features, {} classes -> {}\n", ds.size(), ds.n_features,
                           ds.n_classes, out);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedmesh: decentralized federated learning testbed"};
  app.require_subcommand(1);

  SimArgs sim;
  auto* sim_cmd = app.add_subcommand("sim", "Run a scenario in-process");
  sim_cmd->add_option("--scenario", sim.scenario, "Scenario JSON")->required();
  sim_cmd->add_option("--out", sim.out, "Output directory");
  sim_cmd->add_option("--seeds", sim.seeds, "Comma-separated master seeds")->delimiter(',');
  sim_cmd->add_option("--topologies", sim.topologies, "Comma-separated topologies")->delimiter(',');
  sim_cmd->add_option("--time-compression", sim.time_compression, "Telemetry time scale (>= 1)");
  sim_cmd->add_option("--edge-profile", sim.edge_profile, "Simulated TRAIN_S,EXCHANGE_S per round");
  sim_cmd->add_flag("--in-memory", sim.in_memory, "Use in-memory channels instead of loopback sockets");

  NodeArgs node;
  auto* node_cmd = app.add_subcommand("node", "Run one participant");
  node_cmd->add_option("--bind", node.bind, "HOST:PORT for the config endpoint")->required();
  node_cmd->add_option("--config-timeout", node.config_timeout_s, "Seconds to wait for a config");
  node_cmd->add_option("--resources", node.resources, "simulated|os");
  node_cmd->add_option("--time-compression", node.time_compression, "Telemetry time scale (>= 1)");
  node_cmd->add_option("--edge-profile", node.edge_profile, "Simulated TRAIN_S,EXCHANGE_S per round");

  ControllerArgs ctl;
  auto* ctl_cmd = app.add_subcommand("controller", "Distribute a scenario and collect results");
  ctl_cmd->add_option("--scenario", ctl.scenario, "Scenario JSON")->required();
  ctl_cmd->add_option("--bind", ctl.bind, "HOST:PORT for the ingest endpoints");
  ctl_cmd->add_option("--out", ctl.out, "Output directory");
  ctl_cmd->add_option("--deadline", ctl.deadline_s, "Seconds before the run is closed as partial");

  std::string record, format = "md";
  auto* rep_cmd = app.add_subcommand("report", "Render a stored run record");
  rep_cmd->add_option("--record", record, "run_record.json")->required();
  rep_cmd->add_option("--format", format, "csv|md|json");

  auto* ds_cmd = app.add_subcommand("dataset", "Dataset utilities");
  ds_cmd->require_subcommand(1);
  std::string data_dir, synth_spec, synth_out;
  auto* inspect_cmd = ds_cmd->add_subcommand("inspect", "Summarize an IDX directory");
  inspect_cmd->add_option("--data-dir", data_dir)->required();
  auto* synth_cmd = ds_cmd->add_subcommand("synth", "Write a synthetic dataset as CSV");
  synth_cmd->add_option("--spec", synth_spec)->required();
  synth_cmd->add_option("--out", synth_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*sim_cmd) return cmd_sim(sim);
    if (*node_cmd) return cmd_node(node);
    if (*ctl_cmd) return cmd_controller(ctl);
    if (*rep_cmd) return cmd_report(record, format);
    if (*inspect_cmd) return cmd_dataset_inspect(data_dir);
    if (*synth_cmd) return cmd_dataset_synth(synth_spec, synth_out);
  } catch (const InvalidScenario& e) {
    print_violations(e.violations());
    return kUsage;
  } catch (const TimeoutError& e) {
    std::cerr << "timeout: " << e.what() << "\n";
    return kTimeout;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
