#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fedmesh/net.hpp"
#include "fedmesh/telemetry.hpp"

namespace fedmesh {

// ---- Peer framing -------------------------------------------------------
//
//   u32 length (BE, bytes after this field) | u8 msg_type | payload
//
//   HELLO 0x01: u16 node_id
//   MODEL 0x02: u32 round | u16 node_id | model payload (see serialize_params)
//   BYE   0x03: empty

enum class MsgType : std::uint8_t { hello = 0x01, model = 0x02, bye = 0x03 };

inline constexpr std::uint32_t kMaxFrameLength = 16u * 1024u * 1024u;
inline constexpr std::size_t kModelFrameOverhead = 4 + 1 + 4 + 2;

struct Hello {
  std::uint16_t node_id = 0;
  bool operator==(const Hello&) const = default;
};

struct ModelMsg {
  std::uint32_t round = 0;
  std::uint16_t node_id = 0;
  std::vector<std::uint8_t> params_payload;
  bool operator==(const ModelMsg&) const = default;
};

struct Bye {
  bool operator==(const Bye&) const = default;
};

using PeerMessage = std::variant<Hello, ModelMsg, Bye>;

// Throws OversizeError when the frame would exceed the cap.
std::vector<std::uint8_t> encode_frame(const PeerMessage& msg);

struct DecodedFrame {
  PeerMessage message;
  std::size_t consumed = 0;
};

// Decodes exactly one frame from the front of `bytes`. Throws
// TruncationError (incomplete), OversizeError, or ProtocolError (unknown
// type, malformed body).
DecodedFrame decode_frame(std::span<const std::uint8_t> bytes);

// Blocking read of one frame; nullopt on clean EOF at a frame boundary.
std::optional<PeerMessage> read_frame(net::TcpStream& stream);

constexpr std::size_t model_frame_size(std::size_t payload_bytes) {
  return kModelFrameOverhead + payload_bytes;
}

// ---- Telemetry messages (JSON over HTTP) ---------------------------------

struct MetricReport {
  int node_id = 0;
  std::uint64_t seq = 0;
  std::int64_t timestamp_ms = 0;
  int round = 0;
  double cpu_pct = 0.0;
  double ram_pct = 0.0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t bytes_recv = 0;
  std::optional<double> power_w;

  bool operator==(const MetricReport&) const = default;
};

struct NodeSummary {
  int node_id = 0;
  std::string status = "ok";  // "ok" or "failed"
  std::string diagnostic;
  double f1_final = 0.0;
  std::vector<double> f1_per_round;
  std::vector<double> loss_per_round;
  std::vector<std::uint64_t> param_fingerprints;  // after each aggregation
  double energy_j = 0.0;
  double avg_power_w = 0.0;
  double avg_cpu_pct = 0.0;
  double avg_ram_pct = 0.0;
  std::uint64_t total_bytes_sent = 0;
  std::uint64_t total_bytes_recv = 0;
  double duration_s = 0.0;
  std::uint64_t dropped_reports = 0;
  std::vector<PowerSample> power_log;

  bool failed() const { return status != "ok"; }
  bool operator==(const NodeSummary&) const = default;
};

nlohmann::json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const NodeSummary& s);
NodeSummary node_summary_from_json(const nlohmann::json& j);

// True when energy_j agrees with integrate_energy(power_log) within 1e-9
// relative (absolute 1e-9 near zero).
bool summary_energy_consistent(const NodeSummary& s);

}  // namespace fedmesh
