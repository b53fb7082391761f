#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedmesh/dataset.hpp"
#include "fedmesh/model.hpp"
#include "fedmesh/protocol.hpp"
#include "fedmesh/scenario.hpp"
#include "fedmesh/transport.hpp"

namespace fedmesh {

enum class NodePhase {
  idle,
  configured,
  connecting,
  training,
  exchanging,
  aggregating,
  reporting,
  done,
  failed,
};

std::string_view to_string(NodePhase phase);

// Phase machine: IDLE -> CONFIGURED -> CONNECTING -> (TRAINING -> EXCHANGING
// -> AGGREGATING) x rounds -> REPORTING -> DONE, or anything -> FAILED.
class NodeState {
 public:
  explicit NodeState(int rounds) : rounds_(rounds) {}

  // Throws StateError on an illegal transition.
  void enter(NodePhase next);

  NodePhase phase() const { return phase_; }
  int round() const { return round_; }
  const std::vector<NodePhase>& history() const { return history_; }

 private:
  int rounds_;
  int round_ = 0;
  NodePhase phase_ = NodePhase::idle;
  std::vector<NodePhase> history_{NodePhase::idle};
};

// Received models buffered by round, so early arrivals for later rounds are
// kept until their round comes up.
class RoundInbox {
 public:
  // Throws ProtocolError on a second model from the same peer for a round.
  void deposit(int round, int from, ModelParams params);
  bool complete(int round, std::span<const int> neighbors) const;
  std::vector<int> missing(int round, std::span<const int> neighbors) const;
  std::map<int, ModelParams> take(int round);

 private:
  std::map<int, std::map<int, ModelParams>> rounds_;
};

// Element-wise weighted mean of {own} then `received` in order. Weights
// cover own first. Throws IncompatibleArchitecture on digest mismatch and
// ValidationError on bad weights.
ModelParams aggregate(const ModelParams& own, std::span<const ModelParams> received,
                      std::span<const double> weights);

struct ExchangeResult {
  std::map<int, ModelParams> models;  // neighbor id -> params
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_recv = 0;
};

// Sends one MODEL frame per neighbor and waits until every neighbor's model
// for `round` is in the inbox. Throws TimeoutError naming missing peers,
// ProtocolError for out-of-range rounds or impostor ids, NetworkError when a
// link drops early.
ExchangeResult exchange_round(const ModelParams& params, int my_id, int round, int total_rounds,
                              std::span<const int> neighbors, PeerTransport& transport,
                              RoundInbox& inbox, net::Millis timeout);

// Sink for telemetry produced by a node.
class TelemetrySink {
 public:
  virtual ~TelemetrySink() = default;
  virtual bool post_metrics(const MetricReport& report) = 0;
  virtual bool post_summary(const NodeSummary& summary) = 0;
};

// HTTP client sink using the protocol retry policies.
class HttpTelemetrySink final : public TelemetrySink {
 public:
  explicit HttpTelemetrySink(std::string endpoint) : endpoint_(std::move(endpoint)) {}
  bool post_metrics(const MetricReport& report) override;
  bool post_summary(const NodeSummary& summary) override;

 private:
  std::string endpoint_;
};

// Simulated edge-device phase lengths (seconds of telemetry time per round).
struct EdgeProfile {
  double train_s = 0.0;
  double exchange_s = 0.0;
};

enum class ResourceMode { simulated, os };

// Observation hook called on the training context after each aggregation.
struct RoundEvent {
  int node_id;
  int round;
  std::uint64_t fingerprint;
  std::size_t models_aggregated;
  double f1;
};

struct NodeServices {
  PeerTransport* transport = nullptr;
  TelemetrySink* telemetry = nullptr;
  const ScenarioData* data = nullptr;  // loaded from cfg when null
  double time_compression = 1.0;
  std::optional<EdgeProfile> edge_profile;
  ResourceMode resources = ResourceMode::simulated;
  net::Millis connect_timeout{60000};
  net::Millis exchange_timeout{120000};
  std::function<void(const RoundEvent&)> on_round;
};

struct RoundOutcome {
  int round = 0;
  double f1_after_aggregate = 0.0;
  double mean_loss = 0.0;
  std::uint64_t bytes_sent_round = 0;
  std::uint64_t bytes_recv_round = 0;
};

// Runs the full participant lifecycle and returns the summary it posted.
// Failures do not throw: the returned summary has status "failed" and the
// diagnostic names the phase.
NodeSummary run_node(const ScenarioConfig& cfg, int my_id, const NodeServices& services);

}  // namespace fedmesh
