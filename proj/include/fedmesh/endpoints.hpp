#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <set>
#include <string>

#include "fedmesh/http.hpp"
#include "fedmesh/protocol.hpp"
#include "fedmesh/scenario.hpp"
#include "fedmesh/topology.hpp"

namespace fedmesh {

// What a node receives from the controller.
struct ConfigAssignment {
  ScenarioConfig scenario;
  int node_id = 0;
  std::uint64_t node_seed = 0;
};

// Global config plus node_id, node_seed and the overlay edge list.
std::string make_config_body(const ScenarioConfig& cfg, int node_id);

// Decodes and checks a POST /config body. On failure returns the violations
// (the body is rejected with 400). `bound_port` resolves node_id when the
// body omits it.
struct ConfigDecode {
  std::optional<ConfigAssignment> assignment;
  std::vector<Violation> violations;
};
ConfigDecode decode_config_body(const std::string& body, int bound_port);

// One-shot config server. Serves POST /config until one valid config
// arrives, answers 200 {"status":"ok","node_id":K}, then closes the listener
// so the port is free again. Bad requests are answered (400/404/405) and the
// server keeps listening. Throws TimeoutError after `idle_timeout` without
// any connection.
ConfigAssignment serve_config_once(net::TcpListener listener, net::Millis idle_timeout);
ConfigAssignment serve_config_once(const std::string& bind, net::Millis idle_timeout);

struct RetryPolicy {
  int retries = 2;
  net::Millis spacing{250};
  net::Millis timeout{2000};
};

inline constexpr RetryPolicy kMetricsRetry{2, net::Millis(250), net::Millis(2000)};
inline constexpr RetryPolicy kSummaryRetry{5, net::Millis(250), net::Millis(5000)};

struct PostOutcome {
  bool acked = false;
  int attempts = 0;
  int status = 0;  // last HTTP status, 0 when no response
  std::string error;
};

// POST with bounded retry. Connection failures, timeouts and 5xx are
// retried; 4xx is final. Never throws for transport problems.
PostOutcome post_json(const std::string& endpoint, const std::string& path,
                      const std::string& body, const RetryPolicy& policy);

PostOutcome post_metrics(const std::string& endpoint, const MetricReport& report,
                         const RetryPolicy& policy = kMetricsRetry);
PostOutcome post_summary(const std::string& endpoint, const NodeSummary& summary,
                         const RetryPolicy& policy = kSummaryRetry);

}  // namespace fedmesh
