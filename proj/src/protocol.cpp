#include "fedmesh/protocol.hpp"

#include <cmath>

#include <fmt/format.h>

#include "fedmesh/error.hpp"

namespace fedmesh {

namespace {

void put_be(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = bytes - 1; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_be(std::span<const std::uint8_t> b, std::size_t off, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v = (v << 8) | b[off + i];
  return v;
}

PeerMessage decode_body(std::uint8_t type, std::span<const std::uint8_t> payload) {
  switch (static_cast<MsgType>(type)) {
    case MsgType::hello:
      if (payload.size() != 2) throw ProtocolError("HELLO payload must be 2 bytes");
      return Hello{static_cast<std::uint16_t>(get_be(payload, 0, 2))};
    case MsgType::model: {
      if (payload.size() < 6) throw ProtocolError("MODEL payload shorter than its header");
      ModelMsg m;
      m.round = static_cast<std::uint32_t>(get_be(payload, 0, 4));
      m.node_id = static_cast<std::uint16_t>(get_be(payload, 4, 2));
      m.params_payload.assign(payload.begin() + 6, payload.end());
      return m;
    }
    case MsgType::bye:
      if (!payload.empty()) throw ProtocolError("BYE carries no payload");
      return Bye{};
  }
  throw ProtocolError(fmt::format("unknown msg_type 0x{:02x}", type));
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const PeerMessage& msg) {
  std::vector<std::uint8_t> body;
  std::uint8_t type = 0;
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Hello>) {
          type = static_cast<std::uint8_t>(MsgType::hello);
          put_be(body, m.node_id, 2);
        } else if constexpr (std::is_same_v<T, ModelMsg>) {
          type = static_cast<std::uint8_t>(MsgType::model);
          body.reserve(6 + m.params_payload.size());
          put_be(body, m.round, 4);
          put_be(body, m.node_id, 2);
          body.insert(body.end(), m.params_payload.begin(), m.params_payload.end());
        } else {
          type = static_cast<std::uint8_t>(MsgType::bye);
        }
      },
      msg);
  const std::size_t length = 1 + body.size();
  if (length > kMaxFrameLength) {
    throw OversizeError(fmt::format("frame length {} exceeds cap {}", length, kMaxFrameLength));
  }
  std::vector<std::uint8_t> out;
  out.reserve(4 + length);
  put_be(out, length, 4);
  out.push_back(type);
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

DecodedFrame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw TruncationError("frame length field truncated");
  const auto length = static_cast<std::uint32_t>(get_be(bytes, 0, 4));
  if (length > kMaxFrameLength) {
    throw OversizeError(fmt::format("frame length {} exceeds cap {}", length, kMaxFrameLength));
  }
  if (length == 0) throw ProtocolError("frame length 0 has no msg_type");
  if (bytes.size() < 4 + std::size_t{length}) {
    throw TruncationError(fmt::format("frame needs {} bytes, have {}", 4 + length, bytes.size()));
  }
  return {decode_body(bytes[4], bytes.subspan(5, length - 1)), 4 + std::size_t{length}};
}

std::optional<PeerMessage> read_frame(net::TcpStream& stream) {
  std::uint8_t header[4];
  if (!stream.read_exact(header)) return std::nullopt;
  const auto length = static_cast<std::uint32_t>(get_be(header, 0, 4));
  if (length > kMaxFrameLength) {
    throw OversizeError(fmt::format("frame length {} exceeds cap {}", length, kMaxFrameLength));
  }
  if (length == 0) throw ProtocolError("frame length 0 has no msg_type");
  std::vector<std::uint8_t> body(length);
  if (!stream.read_exact(body)) throw TruncationError("stream closed inside a frame");
  return decode_body(body[0], std::span(body).subspan(1));
}

using nlohmann::json;

json to_json(const MetricReport& r) {
  json j = {{"node_id", r.node_id},       {"seq", r.seq},
            {"timestamp_ms", r.timestamp_ms}, {"round", r.round},
            {"cpu_pct", r.cpu_pct},       {"ram_pct", r.ram_pct},
            {"bytes_sent", r.bytes_sent}, {"bytes_recv", r.bytes_recv}};
  j["power_w"] = r.power_w ? json(*r.power_w) : json(nullptr);
  return j;
}

MetricReport metric_report_from_json(const json& j) {
  try {
    MetricReport r;
    r.node_id = j.at("node_id").get<int>();
    r.seq = j.at("seq").get<std::uint64_t>();
    r.timestamp_ms = j.at("timestamp_ms").get<std::int64_t>();
    r.round = j.at("round").get<int>();
    r.cpu_pct = j.at("cpu_pct").get<double>();
    r.ram_pct = j.at("ram_pct").get<double>();
    r.bytes_sent = j.at("bytes_sent").get<std::uint64_t>();
    r.bytes_recv = j.at("bytes_recv").get<std::uint64_t>();
    if (j.contains("power_w") && !j.at("power_w").is_null()) r.power_w = j.at("power_w").get<double>();
    if (r.cpu_pct < 0 || r.cpu_pct > 100 || r.ram_pct < 0 || r.ram_pct > 100) {
      throw ValidationError("metric report: percentages outside [0,100]");
    }
    if (r.power_w && *r.power_w < 0) throw ValidationError("metric report: negative power");
    return r;
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("metric report: {}", e.what()));
  }
}

json to_json(const NodeSummary& s) {
  json log = json::array();
  for (const auto& p : s.power_log) {
    log.push_back({p.timestamp_ms, p.voltage_v, p.current_a, p.power_w});
  }
  return {{"node_id", s.node_id},
          {"status", s.status},
          {"diagnostic", s.diagnostic},
          {"f1_final", s.f1_final},
          {"f1_per_round", s.f1_per_round},
          {"loss_per_round", s.loss_per_round},
          {"param_fingerprints", s.param_fingerprints},
          {"energy_j", s.energy_j},
          {"avg_power_w", s.avg_power_w},
          {"avg_cpu_pct", s.avg_cpu_pct},
          {"avg_ram_pct", s.avg_ram_pct},
          {"total_bytes_sent", s.total_bytes_sent},
          {"total_bytes_recv", s.total_bytes_recv},
          {"duration_s", s.duration_s},
          {"dropped_reports", s.dropped_reports},
          {"power_log", log}};
}

NodeSummary node_summary_from_json(const json& j) {
  try {
    NodeSummary s;
    s.node_id = j.at("node_id").get<int>();
    s.status = j.value("status", std::string("ok"));
    s.diagnostic = j.value("diagnostic", std::string());
    s.f1_final = j.at("f1_final").get<double>();
    s.f1_per_round = j.at("f1_per_round").get<std::vector<double>>();
    s.loss_per_round = j.value("loss_per_round", std::vector<double>{});
    s.param_fingerprints = j.value("param_fingerprints", std::vector<std::uint64_t>{});
    s.energy_j = j.at("energy_j").get<double>();
    s.avg_power_w = j.at("avg_power_w").get<double>();
    s.avg_cpu_pct = j.value("avg_cpu_pct", 0.0);
    s.avg_ram_pct = j.value("avg_ram_pct", 0.0);
    s.total_bytes_sent = j.at("total_bytes_sent").get<std::uint64_t>();
    s.total_bytes_recv = j.at("total_bytes_recv").get<std::uint64_t>();
    s.duration_s = j.at("duration_s").get<double>();
    s.dropped_reports = j.value("dropped_reports", std::uint64_t{0});
    for (const auto& row : j.at("power_log")) {
      if (!row.is_array() || row.size() != 4) throw ValidationError("power_log rows have 4 fields");
      s.power_log.push_back({row[0].get<std::int64_t>(), row[1].get<double>(),
                             row[2].get<double>(), row[3].get<double>()});
    }
    if (s.energy_j < 0) throw ValidationError("node summary: negative energy");
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("node summary: {}", e.what()));
  }
}

bool summary_energy_consistent(const NodeSummary& s) {
  double expected = 0.0;
  try {
    expected = integrate_energy(s.power_log);
  } catch (const ValidationError&) {
    return false;
  }
  const double scale = std::max(std::abs(expected), 1.0);
  return std::abs(expected - s.energy_j) <= 1e-9 * scale;
}

}  // namespace fedmesh
