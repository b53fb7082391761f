#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedmesh/error.hpp"

namespace fedmesh {

enum class TopologyKind { fully, star, ring, random };
enum class DatasetSource { mnist, fashion_mnist, synthetic };
enum class PartitionKind { iid };
enum class InitScheme { uniform_he };
enum class MeterBackend { simulated, replay, none };

std::string_view to_string(TopologyKind kind);
std::string_view to_string(DatasetSource source);
std::string_view to_string(MeterBackend backend);
TopologyKind topology_kind_from_string(std::string_view text);

struct ParticipantSpec {
  int node_id = 0;
  std::string host = "127.0.0.1";
  int config_port = 0;
  int peer_port = 0;
  std::string metrics_endpoint;  // e.g. "http://10.0.0.1:8000"

  bool operator==(const ParticipantSpec&) const = default;
};

struct TopologySpec {
  TopologyKind kind = TopologyKind::fully;
  std::optional<double> edge_probability;
  std::optional<int> hub_id;
  std::uint64_t seed = 0;

  bool operator==(const TopologySpec&) const = default;
};

struct SyntheticSpec {
  int n_samples = 1000;
  int n_features = 10;
  int n_classes = 2;
  double cluster_stddev = 0.05;

  bool operator==(const SyntheticSpec&) const = default;
};

struct DatasetSpec {
  DatasetSource source = DatasetSource::synthetic;
  std::string data_dir;
  std::optional<SyntheticSpec> synthetic;
  PartitionKind partition = PartitionKind::iid;
  double test_fraction = 0.2;

  bool operator==(const DatasetSpec&) const = default;

  int n_features() const;
  int n_classes() const;
};

struct ModelSpec {
  int input_dim = 784;
  std::vector<int> hidden_dims{128};
  int output_dim = 10;
  InitScheme init_scheme = InitScheme::uniform_he;

  bool operator==(const ModelSpec&) const = default;
};

struct MeterSpec {
  MeterBackend backend = MeterBackend::simulated;
  double idle_watts = 2.6;
  double load_coefficient_watts = 2.8;
  double noise_stddev_watts = 0.05;
  int sample_interval_ms = 1000;
  std::optional<std::string> replay_path;

  bool operator==(const MeterSpec&) const = default;
};

struct ScenarioConfig {
  std::string scenario_name = "scenario";
  std::vector<ParticipantSpec> participants;
  TopologySpec topology;
  DatasetSpec dataset;
  int rounds = 10;
  int local_epochs = 1;
  ModelSpec model;
  double learning_rate = 0.01;
  int batch_size = 32;
  int metric_interval_ms = 1000;
  MeterSpec power_meter;
  std::uint64_t master_seed = 0;

  bool operator==(const ScenarioConfig&) const = default;

  int node_count() const { return static_cast<int>(participants.size()); }
  const ParticipantSpec& participant(int node_id) const;
};

struct Violation {
  std::string field;
  std::string message;

  bool operator==(const Violation&) const = default;
};

// Thrown by parse_scenario when the document decodes but breaks invariants.
class InvalidScenario : public ValidationError {
 public:
  explicit InvalidScenario(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const noexcept {
    return violations_;
  }

 private:
  std::vector<Violation> violations_;
};

// Every violated invariant, in a fixed check order. Empty means valid.
std::vector<Violation> validate_scenario(const ScenarioConfig& cfg);

// Decodes a JSON document, filling documented defaults, without checking
// cross-field invariants. Throws ParseError (malformed JSON, with byte
// offset) or ValidationError (missing/mistyped field, unknown enum value).
ScenarioConfig decode_scenario(std::string_view text);

// decode_scenario followed by validate_scenario; throws InvalidScenario.
ScenarioConfig parse_scenario(std::string_view text);

std::string serialize_scenario(const ScenarioConfig& cfg, int indent = 2);

ScenarioConfig load_scenario_file(const std::string& path);

}  // namespace fedmesh
