#include "fedmesh/scenario.hpp"

#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "fedmesh/scenario_json.hpp"

namespace fedmesh {

using nlohmann::json;

std::string_view to_string(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::fully: return "fully";
    case TopologyKind::star: return "star";
    case TopologyKind::ring: return "ring";
    case TopologyKind::random: return "random";
  }
  return "?";
}

std::string_view to_string(DatasetSource source) {
  switch (source) {
    case DatasetSource::mnist: return "mnist";
    case DatasetSource::fashion_mnist: return "fashion_mnist";
    case DatasetSource::synthetic: return "synthetic";
  }
  return "?";
}

std::string_view to_string(MeterBackend backend) {
  switch (backend) {
    case MeterBackend::simulated: return "simulated";
    case MeterBackend::replay: return "replay";
    case MeterBackend::none: return "none";
  }
  return "?";
}

TopologyKind topology_kind_from_string(std::string_view text) {
  if (text == "fully") return TopologyKind::fully;
  if (text == "star") return TopologyKind::star;
  if (text == "ring") return TopologyKind::ring;
  if (text == "random") return TopologyKind::random;
  throw ValidationError(fmt::format("topology.kind: unknown topology kind '{}'", text));
}

namespace {

DatasetSource dataset_source_from_string(std::string_view text) {
  if (text == "mnist") return DatasetSource::mnist;
  if (text == "fashion_mnist") return DatasetSource::fashion_mnist;
  if (text == "synthetic") return DatasetSource::synthetic;
  throw ValidationError(fmt::format("dataset.source: unknown dataset source '{}'", text));
}

MeterBackend meter_backend_from_string(std::string_view text) {
  if (text == "simulated") return MeterBackend::simulated;
  if (text == "replay") return MeterBackend::replay;
  if (text == "none") return MeterBackend::none;
  throw ValidationError(fmt::format("power_meter.backend: unknown backend '{}'", text));
}

// Reads obj[key] as T, naming the dotted path on failure.
template <typename T>
T field(const json& obj, const std::string& path, const char* key) {
  const std::string full = path.empty() ? key : path + "." + key;
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ValidationError(fmt::format("{}: missing required field", full));
  }
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ValidationError(fmt::format("{}: wrong type ({})", full, it->type_name()));
  }
}

template <typename T>
T field_or(const json& obj, const std::string& path, const char* key,
           T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  return field<T>(obj, path, key);
}

template <typename T>
std::optional<T> optional_field(const json& obj, const std::string& path,
                                const char* key) {
  if (!obj.contains(key) || obj.at(key).is_null()) return std::nullopt;
  return field<T>(obj, path, key);
}

const json& object_field(const json& obj, const std::string& path,
                         const char* key) {
  const std::string full = path.empty() ? key : path + "." + key;
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw ValidationError(fmt::format("{}: missing required field", full));
  }
  if (!it->is_object()) {
    throw ValidationError(fmt::format("{}: expected an object", full));
  }
  return *it;
}

ModelSpec default_model(const DatasetSpec& ds) {
  ModelSpec m;
  m.input_dim = ds.n_features();
  m.output_dim = ds.n_classes();
  return m;
}

}  // namespace

int DatasetSpec::n_features() const {
  if (source == DatasetSource::synthetic) {
    return synthetic ? synthetic->n_features : 0;
  }
  return 28 * 28;
}

int DatasetSpec::n_classes() const {
  if (source == DatasetSource::synthetic) {
    return synthetic ? synthetic->n_classes : 0;
  }
  return 10;
}

const ParticipantSpec& ScenarioConfig::participant(int node_id) const {
  for (const auto& p : participants) {
    if (p.node_id == node_id) return p;
  }
  throw ValidationError(fmt::format("no participant with node_id {}", node_id));
}

InvalidScenario::InvalidScenario(std::vector<Violation> violations)
    : ValidationError([&] {
        std::string msg = "invalid scenario:";
        for (const auto& v : violations) {
          msg += fmt::format(" [{}: {}]", v.field, v.message);
        }
        return msg;
      }()),
      violations_(std::move(violations)) {}

std::vector<Violation> validate_scenario(const ScenarioConfig& cfg) {
  std::vector<Violation> out;
  auto add = [&](std::string f, std::string m) {
    out.push_back({std::move(f), std::move(m)});
  };

  const int n = cfg.node_count();
  if (n == 0) add("participants", "must be nonempty");

  std::set<int> seen_ids;
  std::set<std::pair<std::string, int>> endpoints;
  for (int i = 0; i < n; ++i) {
    const auto& p = cfg.participants[i];
    const std::string base = fmt::format("participants[{}]", i);
    if (p.node_id < 0) {
      add(base + ".node_id", "must be >= 0");
    } else if (p.node_id >= n) {
      add(base + ".node_id", fmt::format("node_id {} out of range 0..{}", p.node_id, n - 1));
    }
    if (!seen_ids.insert(p.node_id).second) {
      add(base + ".node_id", fmt::format("duplicate node_id {}", p.node_id));
    }
    if (p.host.empty()) add(base + ".host", "must be nonempty");
    for (auto [name, port] : {std::pair{"config_port", p.config_port},
                              std::pair{"peer_port", p.peer_port}}) {
      if (port < 1 || port > 65535) {
        add(base + "." + name, fmt::format("port {} outside 1..65535", port));
      } else if (!endpoints.insert({p.host, port}).second) {
        add(base + "." + name,
            fmt::format("duplicate endpoint {}:{}", p.host, port));
      }
    }
  }

  if (cfg.rounds < 1) add("rounds", "must be >= 1");
  if (cfg.local_epochs < 1) add("local_epochs", "must be >= 1");
  if (!(cfg.learning_rate > 0.0)) add("learning_rate", "must be > 0");
  if (cfg.batch_size < 1) add("batch_size", "must be >= 1");
  if (cfg.metric_interval_ms < 1) add("metric_interval_ms", "must be >= 1");

  const auto& topo = cfg.topology;
  if (topo.kind == TopologyKind::random) {
    if (!topo.edge_probability || !(*topo.edge_probability > 0.0) ||
        *topo.edge_probability > 1.0) {
      add("topology.edge_probability", "random topology requires edge_probability in (0,1]");
    }
  }
  if (topo.kind == TopologyKind::ring && n > 0 && n < 3) {
    add("topology.kind", "ring requires at least 3 participants");
  }
  if (topo.hub_id && (*topo.hub_id < 0 || *topo.hub_id >= n)) {
    add("topology.hub_id", "hub_id out of range");
  }

  const auto& ds = cfg.dataset;
  if ((ds.source == DatasetSource::synthetic) != ds.synthetic.has_value()) {
    add("dataset.synthetic", "synthetic block required iff source is synthetic");
  }
  if (ds.synthetic) {
    const auto& s = *ds.synthetic;
    if (s.n_classes < 2) add("dataset.synthetic.n_classes", "must be >= 2");
    if (s.n_features < 1) add("dataset.synthetic.n_features", "must be >= 1");
    if (s.n_samples < 2) add("dataset.synthetic.n_samples", "must be >= 2");
    if (!(s.cluster_stddev >= 0.0)) add("dataset.synthetic.cluster_stddev", "must be >= 0");
  }
  if (ds.source != DatasetSource::synthetic && ds.data_dir.empty()) {
    add("dataset.data_dir", "required for IDX datasets");
  }
  if (!(ds.test_fraction > 0.0 && ds.test_fraction < 1.0)) {
    add("dataset.test_fraction", "must be in (0,1)");
  }

  const auto& m = cfg.model;
  if (m.input_dim < 1) add("model.input_dim", "must be >= 1");
  if (m.output_dim < 1) add("model.output_dim", "must be >= 1");
  for (std::size_t i = 0; i < m.hidden_dims.size(); ++i) {
    if (m.hidden_dims[i] < 1) add(fmt::format("model.hidden_dims[{}]", i), "must be >= 1");
  }
  if (ds.n_features() > 0 && m.input_dim != ds.n_features()) {
    add("model.input_dim", fmt::format("must equal dataset n_features ({})", ds.n_features()));
  }
  if (ds.n_classes() > 0 && m.output_dim != ds.n_classes()) {
    add("model.output_dim", fmt::format("must equal dataset n_classes ({})", ds.n_classes()));
  }

  const auto& pm = cfg.power_meter;
  if ((pm.backend == MeterBackend::replay) != pm.replay_path.has_value()) {
    add("power_meter.replay_path", "replay_path required iff backend is replay");
  }
  if (!(pm.idle_watts >= 0.0)) add("power_meter.idle_watts", "must be >= 0");
  if (!(pm.load_coefficient_watts >= 0.0)) add("power_meter.load_coefficient_watts", "must be >= 0");
  if (!(pm.noise_stddev_watts >= 0.0)) add("power_meter.noise_stddev_watts", "must be >= 0");
  if (pm.sample_interval_ms < 1) add("power_meter.sample_interval_ms", "must be >= 1");

  return out;
}

json scenario_to_json(const ScenarioConfig& cfg) {
  json participants = json::array();
  for (const auto& p : cfg.participants) {
    participants.push_back({{"node_id", p.node_id},
                            {"host", p.host},
                            {"config_port", p.config_port},
                            {"peer_port", p.peer_port},
                            {"metrics_endpoint", p.metrics_endpoint}});
  }
  json topology = {{"kind", to_string(cfg.topology.kind)},
                   {"seed", cfg.topology.seed}};
  if (cfg.topology.edge_probability) {
    topology["edge_probability"] = *cfg.topology.edge_probability;
  }
  if (cfg.topology.hub_id) topology["hub_id"] = *cfg.topology.hub_id;

  json dataset = {{"source", to_string(cfg.dataset.source)},
                  {"data_dir", cfg.dataset.data_dir},
                  {"partition", "iid"},
                  {"test_fraction", cfg.dataset.test_fraction}};
  if (cfg.dataset.synthetic) {
    const auto& s = *cfg.dataset.synthetic;
    dataset["synthetic"] = {{"n_samples", s.n_samples},
                            {"n_features", s.n_features},
                            {"n_classes", s.n_classes},
                            {"cluster_stddev", s.cluster_stddev}};
  }

  json meter = {{"backend", to_string(cfg.power_meter.backend)},
                {"idle_watts", cfg.power_meter.idle_watts},
                {"load_coefficient_watts", cfg.power_meter.load_coefficient_watts},
                {"noise_stddev_watts", cfg.power_meter.noise_stddev_watts},
                {"sample_interval_ms", cfg.power_meter.sample_interval_ms}};
  if (cfg.power_meter.replay_path) meter["replay_path"] = *cfg.power_meter.replay_path;

  return {{"scenario_name", cfg.scenario_name},
          {"participants", participants},
          {"topology", topology},
          {"dataset", dataset},
          {"rounds", cfg.rounds},
          {"local_epochs", cfg.local_epochs},
          {"model",
           {{"input_dim", cfg.model.input_dim},
            {"hidden_dims", cfg.model.hidden_dims},
            {"output_dim", cfg.model.output_dim},
            {"init_scheme", "uniform_he"}}},
          {"learning_rate", cfg.learning_rate},
          {"batch_size", cfg.batch_size},
          {"metric_interval_ms", cfg.metric_interval_ms},
          {"power_meter", meter},
          {"master_seed", cfg.master_seed}};
}

ScenarioConfig scenario_from_json(const json& doc) {
  if (!doc.is_object()) throw ValidationError("scenario: expected a JSON object");
  ScenarioConfig cfg;
  cfg.scenario_name = field_or<std::string>(doc, "", "scenario_name", cfg.scenario_name);
  cfg.master_seed = field_or<std::uint64_t>(doc, "", "master_seed", 0);

  auto pit = doc.find("participants");
  if (pit == doc.end()) throw ValidationError("participants: missing required field");
  if (!pit->is_array()) throw ValidationError("participants: expected an array");
  for (std::size_t i = 0; i < pit->size(); ++i) {
    const auto& pj = (*pit)[i];
    const std::string path = fmt::format("participants[{}]", i);
    if (!pj.is_object()) throw ValidationError(path + ": expected an object");
    ParticipantSpec p;
    p.node_id = field<int>(pj, path, "node_id");
    p.host = field_or<std::string>(pj, path, "host", p.host);
    p.config_port = field<int>(pj, path, "config_port");
    p.peer_port = field<int>(pj, path, "peer_port");
    p.metrics_endpoint = field_or<std::string>(pj, path, "metrics_endpoint", "");
    cfg.participants.push_back(std::move(p));
  }

  const json& tj = object_field(doc, "", "topology");
  cfg.topology.kind = topology_kind_from_string(field<std::string>(tj, "topology", "kind"));
  cfg.topology.edge_probability = optional_field<double>(tj, "topology", "edge_probability");
  if (cfg.topology.kind == TopologyKind::random && !cfg.topology.edge_probability) {
    cfg.topology.edge_probability = 0.5;
  }
  cfg.topology.hub_id = optional_field<int>(tj, "topology", "hub_id");
  cfg.topology.seed = field_or<std::uint64_t>(tj, "topology", "seed", cfg.master_seed);

  const json& dj = object_field(doc, "", "dataset");
  cfg.dataset.source = dataset_source_from_string(field<std::string>(dj, "dataset", "source"));
  cfg.dataset.data_dir = field_or<std::string>(dj, "dataset", "data_dir", "");
  if (dj.contains("synthetic") && !dj.at("synthetic").is_null()) {
    const json& sj = object_field(dj, "dataset", "synthetic");
    SyntheticSpec s;
    s.n_samples = field<int>(sj, "dataset.synthetic", "n_samples");
    s.n_features = field<int>(sj, "dataset.synthetic", "n_features");
    s.n_classes = field<int>(sj, "dataset.synthetic", "n_classes");
    s.cluster_stddev = field_or<double>(sj, "dataset.synthetic", "cluster_stddev", s.cluster_stddev);
    cfg.dataset.synthetic = s;
  }
  const auto partition = field_or<std::string>(dj, "dataset", "partition", "iid");
  if (partition != "iid") {
    throw ValidationError(fmt::format("dataset.partition: unsupported partition '{}'", partition));
  }
  cfg.dataset.test_fraction = field_or<double>(dj, "dataset", "test_fraction", 0.2);

  cfg.rounds = field_or<int>(doc, "", "rounds", 10);
  cfg.local_epochs = field_or<int>(doc, "", "local_epochs", 1);
  cfg.learning_rate = field_or<double>(doc, "", "learning_rate", 0.01);
  cfg.batch_size = field_or<int>(doc, "", "batch_size", 32);
  cfg.metric_interval_ms = field_or<int>(doc, "", "metric_interval_ms", 1000);

  cfg.model = default_model(cfg.dataset);
  if (doc.contains("model") && !doc.at("model").is_null()) {
    const json& mj = object_field(doc, "", "model");
    cfg.model.input_dim = field_or<int>(mj, "model", "input_dim", cfg.model.input_dim);
    cfg.model.hidden_dims =
        field_or<std::vector<int>>(mj, "model", "hidden_dims", cfg.model.hidden_dims);
    cfg.model.output_dim = field_or<int>(mj, "model", "output_dim", cfg.model.output_dim);
    const auto init = field_or<std::string>(mj, "model", "init_scheme", "uniform_he");
    if (init != "uniform_he") {
      throw ValidationError(fmt::format("model.init_scheme: unknown scheme '{}'", init));
    }
  }

  if (doc.contains("power_meter") && !doc.at("power_meter").is_null()) {
    const json& mj = object_field(doc, "", "power_meter");
    auto& pm = cfg.power_meter;
    pm.backend = meter_backend_from_string(
        field_or<std::string>(mj, "power_meter", "backend", "simulated"));
    pm.idle_watts = field_or<double>(mj, "power_meter", "idle_watts", pm.idle_watts);
    pm.load_coefficient_watts = field_or<double>(mj, "power_meter", "load_coefficient_watts",
                                                 pm.load_coefficient_watts);
    pm.noise_stddev_watts =
        field_or<double>(mj, "power_meter", "noise_stddev_watts", pm.noise_stddev_watts);
    pm.sample_interval_ms =
        field_or<int>(mj, "power_meter", "sample_interval_ms", pm.sample_interval_ms);
    pm.replay_path = optional_field<std::string>(mj, "power_meter", "replay_path");
  }
  return cfg;
}

ScenarioConfig decode_scenario(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(fmt::format("malformed JSON at byte {}: {}", e.byte, e.what()), e.byte);
  }
  return scenario_from_json(doc);
}

ScenarioConfig parse_scenario(std::string_view text) {
  ScenarioConfig cfg = decode_scenario(text);
  auto violations = validate_scenario(cfg);
  if (!violations.empty()) throw InvalidScenario(std::move(violations));
  return cfg;
}

std::string serialize_scenario(const ScenarioConfig& cfg, int indent) {
  return scenario_to_json(cfg).dump(indent);
}

ScenarioConfig load_scenario_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(fmt::format("{}: file not found", path));
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

}  // namespace fedmesh
