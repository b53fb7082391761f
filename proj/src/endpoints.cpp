#include "fedmesh/endpoints.hpp"

#include <thread>

#include <fmt/format.h>

#include "fedmesh/rng.hpp"
#include "fedmesh/scenario_json.hpp"

namespace fedmesh {

using nlohmann::json;

std::string make_config_body(const ScenarioConfig& cfg, int node_id) {
  json doc = scenario_to_json(cfg);
  doc["node_id"] = node_id;
  doc["node_seed"] = node_seed(cfg.master_seed, node_id);
  doc["edges"] = edges_to_json(build_topology(cfg.topology, cfg.node_count()));
  return doc.dump();
}

ConfigDecode decode_config_body(const std::string& body, int bound_port) {
  ConfigDecode out;
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    out.violations.push_back({"body", fmt::format("malformed JSON at byte {}", e.byte)});
    return out;
  }
  ScenarioConfig cfg;
  try {
    cfg = scenario_from_json(doc);
  } catch (const Error& e) {
    out.violations.push_back({"body", e.what()});
    return out;
  }
  out.violations = validate_scenario(cfg);
  if (!out.violations.empty()) return out;

  ConfigAssignment a;
  a.scenario = cfg;
  if (doc.contains("node_id") && doc["node_id"].is_number_integer()) {
    a.node_id = doc["node_id"].get<int>();
  } else {
    a.node_id = -1;
    for (const auto& p : cfg.participants) {
      if (p.config_port == bound_port) a.node_id = p.node_id;
    }
  }
  if (a.node_id < 0 || a.node_id >= cfg.node_count()) {
    out.violations.push_back({"node_id", "cannot determine this node's id"});
    return out;
  }
  a.node_seed = node_seed(cfg.master_seed, a.node_id);
  if (doc.contains("node_seed")) {
    if (!doc["node_seed"].is_number_unsigned() ||
        doc["node_seed"].get<std::uint64_t>() != a.node_seed) {
      out.violations.push_back({"node_seed", "does not match master_seed derivation"});
    }
  }
  if (doc.contains("edges")) {
    try {
      if (edges_from_json(doc["edges"]) != build_topology(cfg.topology, cfg.node_count()).edges()) {
        out.violations.push_back({"edges", "edge list does not match topology spec"});
      }
    } catch (const Error& e) {
      out.violations.push_back({"edges", e.what()});
    }
  }
  if (out.violations.empty()) out.assignment = std::move(a);
  return out;
}

ConfigAssignment serve_config_once(net::TcpListener listener, net::Millis idle_timeout) {
  const int port = listener.port();
  std::optional<ConfigAssignment> accepted;
  const http::Handler handler = [&](const http::Request& req) -> http::Response {
    if (req.target != "/config") return {404, R"({"status":"error","error":"not found"})"};
    if (req.method != "POST") return {405, R"({"status":"error","error":"method not allowed"})"};
    auto decoded = decode_config_body(req.body, port);
    if (!decoded.assignment) {
      json v = json::array();
      for (const auto& x : decoded.violations) v.push_back({{"field", x.field}, {"message", x.message}});
      return {400, json{{"status", "error"}, {"violations", v}}.dump()};
    }
    accepted = std::move(decoded.assignment);
    return {200, json{{"status", "ok"}, {"node_id", accepted->node_id}}.dump()};
  };

  auto deadline = std::chrono::steady_clock::now() + idle_timeout;
  while (!accepted) {
    const auto remaining = std::chrono::duration_cast<net::Millis>(deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      throw TimeoutError(fmt::format("no config received on port {} within {} ms", port,
                                     idle_timeout.count()));
    }
    auto stream = listener.accept(std::min(remaining, net::Millis(200)));
    if (!stream.valid()) continue;
    http::serve_connection(std::move(stream), handler, net::Millis(5000));
    deadline = std::chrono::steady_clock::now() + idle_timeout;
  }
  listener.close();
  return std::move(*accepted);
}

ConfigAssignment serve_config_once(const std::string& bind, net::Millis idle_timeout) {
  return serve_config_once(net::TcpListener::bind(net::parse_host_port(bind)), idle_timeout);
}

PostOutcome post_json(const std::string& endpoint, const std::string& path,
                      const std::string& body, const RetryPolicy& policy) {
  PostOutcome out;
  http::Url url;
  try {
    url = http::parse_url(endpoint);
  } catch (const Error& e) {
    out.error = e.what();
    return out;
  }
  for (int attempt = 0; attempt <= policy.retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(policy.spacing);
    ++out.attempts;
    try {
      const auto resp = http::send_request({url.host, url.port}, "POST", path, body, policy.timeout);
      out.status = resp.status;
      if (resp.status >= 200 && resp.status < 300) {
        out.acked = true;
        out.error.clear();
        return out;
      }
      out.error = fmt::format("HTTP {}: {}", resp.status, resp.body);
      if (resp.status < 500) return out;
    } catch (const Error& e) {
      out.error = e.what();
    } catch (const std::exception& e) {
      out.error = e.what();
    }
  }
  return out;
}

PostOutcome post_metrics(const std::string& endpoint, const MetricReport& report,
                         const RetryPolicy& policy) {
  return post_json(endpoint, "/metrics", to_json(report).dump(), policy);
}

PostOutcome post_summary(const std::string& endpoint, const NodeSummary& summary,
                         const RetryPolicy& policy) {
  return post_json(endpoint, "/summary", to_json(summary).dump(), policy);
}

}  // namespace fedmesh
