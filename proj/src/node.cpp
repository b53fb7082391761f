#include "fedmesh/node.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <numeric>
#include <thread>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "fedmesh/endpoints.hpp"
#include "fedmesh/error.hpp"
#include "fedmesh/log.hpp"
#include "fedmesh/rng.hpp"
#include "fedmesh/telemetry.hpp"
#include "fedmesh/topology.hpp"

namespace fedmesh {

std::string_view to_string(NodePhase phase) {
  switch (phase) {
    case NodePhase::idle: return "IDLE";
    case NodePhase::configured: return "CONFIGURED";
    case NodePhase::connecting: return "CONNECTING";
    case NodePhase::training: return "TRAINING";
    case NodePhase::exchanging: return "EXCHANGING";
    case NodePhase::aggregating: return "AGGREGATING";
    case NodePhase::reporting: return "REPORTING";
    case NodePhase::done: return "DONE";
    case NodePhase::failed: return "FAILED";
  }
  return "?";
}

void NodeState::enter(NodePhase next) {
  bool ok = false;
  switch (next) {
    case NodePhase::failed: ok = phase_ != NodePhase::done; break;
    case NodePhase::configured: ok = phase_ == NodePhase::idle; break;
    case NodePhase::connecting: ok = phase_ == NodePhase::configured; break;
    case NodePhase::training:
      ok = phase_ == NodePhase::connecting ||
           (phase_ == NodePhase::aggregating && round_ + 1 < rounds_);
      break;
    case NodePhase::exchanging: ok = phase_ == NodePhase::training; break;
    case NodePhase::aggregating: ok = phase_ == NodePhase::exchanging; break;
    case NodePhase::reporting:
      ok = phase_ == NodePhase::aggregating && round_ + 1 == rounds_;
      break;
    case NodePhase::done: ok = phase_ == NodePhase::reporting; break;
    case NodePhase::idle: ok = false; break;
  }
  if (!ok) {
    throw StateError(fmt::format("illegal node transition {} -> {} (round {})", to_string(phase_),
                                 to_string(next), round_));
  }
  if (phase_ == NodePhase::aggregating && next == NodePhase::training) ++round_;
  phase_ = next;
  history_.push_back(next);
}

void RoundInbox::deposit(int round, int from, ModelParams params) {
  auto& slot = rounds_[round];
  if (slot.count(from)) {
    throw ProtocolError(fmt::format("duplicate MODEL from node {} for round {}", from, round));
  }
  slot.emplace(from, std::move(params));
}

bool RoundInbox::complete(int round, std::span<const int> neighbors) const {
  return missing(round, neighbors).empty();
}

std::vector<int> RoundInbox::missing(int round, std::span<const int> neighbors) const {
  std::vector<int> out;
  auto it = rounds_.find(round);
  for (int n : neighbors) {
    if (it == rounds_.end() || !it->second.count(n)) out.push_back(n);
  }
  return out;
}

std::map<int, ModelParams> RoundInbox::take(int round) {
  auto it = rounds_.find(round);
  if (it == rounds_.end()) return {};
  auto out = std::move(it->second);
  rounds_.erase(it);
  return out;
}

ModelParams aggregate(const ModelParams& own, std::span<const ModelParams> received,
                      std::span<const double> weights) {
  if (weights.size() != received.size() + 1) {
    throw ValidationError(fmt::format("aggregate: {} weights for {} models", weights.size(),
                                      received.size() + 1));
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("aggregate: weights must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ValidationError("aggregate: weight sum must be > 0");
  for (const auto& r : received) {
    if (r.digest != own.digest || r.values.size() != own.values.size()) {
      throw IncompatibleArchitecture("aggregate: models have different architectures");
    }
  }
  ModelParams out = own;
  const std::size_t n = own.values.size();
  for (std::size_t k = 0; k < n; ++k) {
    double acc = weights[0] * own.values[k];
    for (std::size_t m = 0; m < received.size(); ++m) acc += weights[m + 1] * received[m].values[k];
    out.values[k] = acc / total;
  }
  return out;
}

ExchangeResult exchange_round(const ModelParams& params, int my_id, int round, int total_rounds,
                              std::span<const int> neighbors, PeerTransport& transport,
                              RoundInbox& inbox, net::Millis timeout) {
  ExchangeResult result;
  if (!neighbors.empty()) {
    ModelMsg msg{static_cast<std::uint32_t>(round), static_cast<std::uint16_t>(my_id),
                 serialize_params(params)};
    const PeerMessage frame = std::move(msg);
    for (int n : neighbors) result.bytes_sent += transport.send(n, frame);
  }

  const auto deadline = std::chrono::steady_clock::now() + timeout;
  auto is_neighbor = [&](int id) {
    return std::find(neighbors.begin(), neighbors.end(), id) != neighbors.end();
  };
  while (!inbox.complete(round, neighbors)) {
    const auto left = std::chrono::duration_cast<net::Millis>(deadline - std::chrono::steady_clock::now());
    std::optional<Incoming> in;
    if (left.count() > 0) in = transport.receive(left);
    if (!in) {
      throw TimeoutError(fmt::format("round {}: no model from neighbor(s) {}", round,
                                     fmt::join(inbox.missing(round, neighbors), ",")));
    }
    if (!in->message || std::holds_alternative<Bye>(*in->message)) {
      const auto miss = inbox.missing(round, neighbors);
      if (std::find(miss.begin(), miss.end(), in->from) != miss.end()) {
        throw NetworkError(fmt::format("round {}: neighbor {} left before sending its model{}",
                                       round, in->from,
                                       in->error.empty() ? "" : " (" + in->error + ")"));
      }
      continue;
    }
    const auto* model = std::get_if<ModelMsg>(&*in->message);
    if (!model) throw ProtocolError(fmt::format("unexpected message from node {}", in->from));
    if (model->node_id != in->from || !is_neighbor(in->from)) {
      throw ProtocolError(fmt::format("MODEL claims node {} on link {}", model->node_id, in->from));
    }
    if (static_cast<int>(model->round) >= total_rounds || static_cast<int>(model->round) < round) {
      throw ProtocolError(fmt::format("MODEL for round {} while in round {} of {}", model->round,
                                      round, total_rounds));
    }
    result.bytes_recv += model_frame_size(model->params_payload.size());
    inbox.deposit(static_cast<int>(model->round), in->from,
                  deserialize_params(model->params_payload, params.arch));
  }
  result.models = inbox.take(round);
  return result;
}

bool HttpTelemetrySink::post_metrics(const MetricReport& report) {
  return fedmesh::post_metrics(endpoint_, report).acked;
}

bool HttpTelemetrySink::post_summary(const NodeSummary& summary) {
  return fedmesh::post_summary(endpoint_, summary).acked;
}

namespace {

// Posts metric reports off the training path.
class AsyncReporter {
 public:
  explicit AsyncReporter(TelemetrySink* sink) : sink_(sink) {
    if (sink_) worker_ = std::thread([this] { loop(); });
  }
  ~AsyncReporter() { stop(); }

  void submit(MetricReport r) {
    if (!sink_) return;
    {
      std::lock_guard lock(mu_);
      queue_.push_back(std::move(r));
    }
    cv_.notify_one();
  }

  void stop() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_one();
    if (worker_.joinable()) worker_.join();
  }

  std::uint64_t dropped() const { return dropped_.load(); }

 private:
  void loop() {
    for (;;) {
      MetricReport r;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        r = std::move(queue_.front());
        queue_.pop_front();
      }
      bool ok = false;
      try {
        ok = sink_->post_metrics(r);
      } catch (const std::exception&) {
        ok = false;
      }
      if (!ok) dropped_.fetch_add(1);
    }
  }

  TelemetrySink* sink_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<MetricReport> queue_;
  bool stopping_ = false;
  std::atomic<std::uint64_t> dropped_{0};
  std::thread worker_;
};

void pad_phase(std::chrono::steady_clock::time_point started, double simulated_s,
               double compression) {
  if (simulated_s <= 0.0) return;
  const auto target = started + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                    std::chrono::duration<double>(simulated_s / compression));
  std::this_thread::sleep_until(target);
}

}  // namespace

NodeSummary run_node(const ScenarioConfig& cfg, int my_id, const NodeServices& services) {
  NodeState state(cfg.rounds);
  NodeSummary summary;
  summary.node_id = my_id;
  const std::uint64_t seed = node_seed(cfg.master_seed, my_id);
  const double compression = services.time_compression > 0 ? services.time_compression : 1.0;

  TelemetryClock clock(compression);
  std::unique_ptr<ResourceSource> resources;
  if (services.resources == ResourceMode::os) {
    resources = std::make_unique<OsResources>();
  } else {
    resources = std::make_unique<SimulatedResources>(mix_seed(seed, 101));
  }
  std::unique_ptr<PowerMeter> meter;
  try {
    meter = make_meter(cfg.power_meter, mix_seed(seed, 102));
  } catch (const Error& e) {
    log_warn("event=meter_unavailable node={} error=\"{}\"", my_id, e.what());
    meter = std::make_unique<NullMeter>();
  }

  std::atomic<int> current_round{0};
  std::atomic<std::uint64_t> bytes_sent{0}, bytes_recv{0};
  std::uint64_t seq = 0;
  AsyncReporter reporter(services.telemetry);
  Sampler sampler(*resources, *meter, clock,
                  {cfg.power_meter.sample_interval_ms, cfg.metric_interval_ms},
                  [&](const ResourceSample& rs, const std::optional<PowerSample>& ps) {
                    MetricReport r;
                    r.node_id = my_id;
                    r.seq = ++seq;
                    r.timestamp_ms = rs.timestamp_ms;
                    r.round = current_round.load();
                    r.cpu_pct = rs.cpu_pct;
                    r.ram_pct = rs.ram_pct;
                    r.bytes_sent = bytes_sent.load();
                    r.bytes_recv = bytes_recv.load();
                    if (ps) r.power_w = ps->power_w;
                    reporter.submit(r);
                  });

  try {
    state.enter(NodePhase::configured);
    sampler.start();

    std::optional<ScenarioData> own_data;
    const ScenarioData* data = services.data;
    if (!data) {
      own_data = load_scenario_data(cfg);
      data = &*own_data;
    }
    const TopologyGraph graph = build_topology(cfg.topology, cfg.node_count());
    const std::vector<int> neighbors = graph.neighbors(my_id);
    const DatasetView shard(data->train, data->partition.shards.at(static_cast<std::size_t>(my_id)));

    ModelParams params = init_model(cfg.model, mix_seed(cfg.master_seed, 4));

    state.enter(NodePhase::connecting);
    if (!services.transport) throw StateError("node has no peer transport");
    services.transport->connect(services.connect_timeout);
    log_info("event=connected node={} neighbors={}", my_id, fmt::join(neighbors, ","));

    RoundInbox inbox;
    for (int round = 0; round < cfg.rounds; ++round) {
      current_round.store(round);
      state.enter(NodePhase::training);
      sampler.set_phase(LoadPhase::training);
      auto phase_start = std::chrono::steady_clock::now();
      auto [trained, report] = train_epochs(params, shard, cfg.local_epochs, cfg.learning_rate,
                                            cfg.batch_size, mix_seed(seed, 1000 + round));
      if (services.edge_profile) pad_phase(phase_start, services.edge_profile->train_s, compression);

      state.enter(NodePhase::exchanging);
      sampler.set_phase(LoadPhase::idle);
      phase_start = std::chrono::steady_clock::now();
      auto exchanged = exchange_round(trained, my_id, round, cfg.rounds, neighbors,
                                      *services.transport, inbox, services.exchange_timeout);
      bytes_sent += exchanged.bytes_sent;
      bytes_recv += exchanged.bytes_recv;
      if (services.edge_profile) pad_phase(phase_start, services.edge_profile->exchange_s, compression);

      if (exchanged.models.size() != neighbors.size()) {
        throw StateError(fmt::format("round {}: aggregating with {} of {} neighbor models", round,
                                     exchanged.models.size(), neighbors.size()));
      }
      state.enter(NodePhase::aggregating);
      // Sum in ascending node id on every node so that nodes holding the
      // same model set end up with the same bits.
      std::map<int, ModelParams> by_id = std::move(exchanged.models);
      by_id.emplace(my_id, std::move(trained));
      std::vector<ModelParams> rest;
      rest.reserve(neighbors.size());
      for (auto it = std::next(by_id.begin()); it != by_id.end(); ++it) rest.push_back(std::move(it->second));
      const std::vector<double> weights(rest.size() + 1, 1.0);
      params = aggregate(by_id.begin()->second, rest, weights);

      const EvalResult eval = evaluate(params, data->test);
      const std::uint64_t fp = params_fingerprint(params);
      summary.f1_per_round.push_back(eval.macro_f1);
      summary.loss_per_round.push_back(report.mean_loss);
      summary.param_fingerprints.push_back(fp);
      log_debug("event=round node={} round={} loss={:.4f} f1={:.4f}", my_id, round,
                report.mean_loss, eval.macro_f1);
      if (services.on_round) {
        services.on_round({my_id, round, fp, rest.size() + 1, eval.macro_f1});
      }
    }
    state.enter(NodePhase::reporting);
    services.transport->close();
  } catch (const std::exception& e) {
    const auto phase = state.phase();
    try {
      state.enter(NodePhase::failed);
    } catch (const StateError&) {
    }
    summary.status = "failed";
    summary.diagnostic = fmt::format("phase={}: {}", to_string(phase), e.what());
    log_error("event=node_failed node={} {}", my_id, summary.diagnostic);
    if (services.transport) {
      try {
        services.transport->close();
      } catch (const std::exception&) {
      }
    }
  }

  sampler.stop();
  reporter.stop();

  summary.f1_final = summary.f1_per_round.empty() ? 0.0 : summary.f1_per_round.back();
  summary.power_log = sampler.power_log();
  summary.energy_j = integrate_energy(summary.power_log);
  summary.avg_power_w = mean_power(summary.power_log);
  const auto rlog = sampler.resource_log();
  double cpu = 0.0, ram = 0.0;
  std::size_t valid = 0;
  for (const auto& r : rlog) {
    if (r.missing) continue;
    cpu += r.cpu_pct;
    ram += r.ram_pct;
    ++valid;
  }
  if (valid) {
    summary.avg_cpu_pct = cpu / static_cast<double>(valid);
    summary.avg_ram_pct = ram / static_cast<double>(valid);
  }
  summary.total_bytes_sent = bytes_sent.load();
  summary.total_bytes_recv = bytes_recv.load();
  summary.duration_s = static_cast<double>(clock.now_ms()) / 1000.0;
  summary.dropped_reports = reporter.dropped();

  if (services.telemetry) {
    bool ok = false;
    try {
      ok = services.telemetry->post_summary(summary);
    } catch (const std::exception&) {
    }
    if (!ok) log_error("event=summary_undelivered node={}", my_id);
  }
  if (state.phase() == NodePhase::reporting) state.enter(NodePhase::done);
  log_info("event=node_finished node={} status={} f1={:.4f}", my_id, summary.status,
           summary.f1_final);
  return summary;
}

}  // namespace fedmesh
