#include <gtest/gtest.h>

#include <thread>

#include <fmt/format.h>

#include "fedmesh/dataset.hpp"
#include "fedmesh/node.hpp"
#include "support/fixtures.hpp"

using namespace fedmesh;
using namespace std::chrono_literals;

namespace {
const ModelSpec kArch{10, {4}, 3, InitScheme::uniform_he};

ModelParams filled(double v) {
  auto p = init_model(kArch, 1);
  std::fill(p.values.begin(), p.values.end(), v);
  return p;
}

class CaptureSink final : public TelemetrySink {
 public:
  bool post_metrics(const MetricReport&) override {
    ++metrics;
    return true;
  }
  bool post_summary(const NodeSummary& s) override {
    summaries.push_back(s);
    return true;
  }
  std::atomic<int> metrics{0};
  std::vector<NodeSummary> summaries;
};

ModelMsg model_msg(int round, int from, const ModelParams& p) {
  return ModelMsg{static_cast<std::uint32_t>(round), static_cast<std::uint16_t>(from), serialize_params(p)};
}
}  // namespace

TEST(NodeState, LegalPath) {
  NodeState s(2);
  for (auto ph : {NodePhase::configured, NodePhase::connecting, NodePhase::training,
                  NodePhase::exchanging, NodePhase::aggregating, NodePhase::training,
                  NodePhase::exchanging, NodePhase::aggregating, NodePhase::reporting, NodePhase::done}) {
    s.enter(ph);
  }
  EXPECT_EQ(s.round(), 1);
  EXPECT_EQ(s.history().size(), 11u);
}

TEST(NodeState, IllegalTransitions) {
  NodeState s(1);
  EXPECT_THROW(s.enter(NodePhase::training), StateError);
  s.enter(NodePhase::configured);
  s.enter(NodePhase::connecting);
  s.enter(NodePhase::training);
  s.enter(NodePhase::exchanging);
  s.enter(NodePhase::aggregating);
  EXPECT_THROW(s.enter(NodePhase::training), StateError);  // only one round
  s.enter(NodePhase::failed);
  EXPECT_EQ(s.phase(), NodePhase::failed);
}

TEST(Aggregate, Examples) {
  const auto a = filled(0.0), b = filled(2.0);
  std::vector<ModelParams> rx{b};
  std::vector<double> eq{1, 1};
  for (double v : aggregate(a, rx, eq).values) EXPECT_EQ(v, 1.0);
  const auto four = filled(4.0);
  std::vector<ModelParams> rx4{four};
  std::vector<double> w{1, 3};
  for (double v : aggregate(a, rx4, w).values) EXPECT_EQ(v, 3.0);
  std::vector<ModelParams> same{b, b};
  std::vector<double> w3{1, 1, 1};
  EXPECT_EQ(aggregate(b, same, w3).values, b.values);
  std::vector<double> w1{1};
  EXPECT_EQ(aggregate(a, {}, w1).values, a.values);
}

TEST(Aggregate, MatchesNaiveMean) {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ModelParams> ms;
    for (int i = 0; i < 5; ++i) ms.push_back(fixtures::random_params(kArch, rng));
    std::vector<std::vector<double>> raw;
    for (auto& m : ms) raw.push_back(m.values);
    const std::vector<double> w(5, 1.0);
    const auto got = aggregate(ms[0], std::span(ms).subspan(1), w);
    const auto want = fixtures::naive_mean(raw);
    for (std::size_t i = 0; i < want.size(); ++i) ASSERT_NEAR(got.values[i], want[i], 1e-12);
  }
}

TEST(Aggregate, Errors) {
  const auto a = filled(1.0);
  auto other = init_model({10, {5}, 3, InitScheme::uniform_he}, 1);
  std::vector<ModelParams> rx{other};
  std::vector<double> w{1, 1};
  EXPECT_THROW(aggregate(a, rx, w), IncompatibleArchitecture);
  std::vector<ModelParams> ok{a};
  std::vector<double> zero{0, 0};
  EXPECT_THROW(aggregate(a, ok, zero), ValidationError);
  std::vector<double> short_w{1};
  EXPECT_THROW(aggregate(a, ok, short_w), ValidationError);
}

TEST(RoundInbox, DuplicateRejected) {
  RoundInbox inbox;
  inbox.deposit(0, 1, filled(1));
  EXPECT_THROW(inbox.deposit(0, 1, filled(1)), ProtocolError);
  std::vector<int> nb{1, 2};
  EXPECT_FALSE(inbox.complete(0, nb));
  EXPECT_EQ(inbox.missing(0, nb), std::vector<int>{2});
  inbox.deposit(0, 2, filled(2));
  EXPECT_TRUE(inbox.complete(0, nb));
  EXPECT_EQ(inbox.take(0).size(), 2u);
}

TEST(Exchange, FutureRoundArrivesFirst) {
  MemoryHub hub(2);
  auto t0 = hub.endpoint(0, {1});
  auto t1 = hub.endpoint(1, {0});
  t0->connect(1000ms);
  t1->connect(1000ms);
  const auto m0 = filled(0.5), r0 = filled(1.0), r1 = filled(2.0);
  t1->send(0, model_msg(1, 1, r1));
  t1->send(0, model_msg(0, 1, r0));
  RoundInbox inbox;
  std::vector<int> nb{1};
  auto first = exchange_round(m0, 0, 0, 3, nb, *t0, inbox, 2000ms);
  EXPECT_EQ(first.models.at(1), r0);
  EXPECT_EQ(first.bytes_sent, model_frame_size(serialized_size(kArch)));
  // Receive counters cover what was read during the call, including the
  // early round-1 frame.
  EXPECT_EQ(first.bytes_recv, 2 * first.bytes_sent);
  auto second = exchange_round(m0, 0, 1, 3, nb, *t0, inbox, 2000ms);
  EXPECT_EQ(second.models.at(1), r1);
  EXPECT_EQ(second.bytes_recv, 0u);
}

TEST(Exchange, ProtocolViolations) {
  const auto m = filled(0.5);
  std::vector<int> nb{1};
  {
    MemoryHub hub(2);
    auto t0 = hub.endpoint(0, {1});
    auto t1 = hub.endpoint(1, {0});
    t1->send(0, model_msg(7, 1, m));  // beyond total rounds
    RoundInbox inbox;
    EXPECT_THROW(exchange_round(m, 0, 0, 3, nb, *t0, inbox, 2000ms), ProtocolError);
  }
  {
    MemoryHub hub(2);
    auto t0 = hub.endpoint(0, {1});
    auto t1 = hub.endpoint(1, {0});
    t1->send(0, model_msg(0, 5, m));  // claims another id
    RoundInbox inbox;
    EXPECT_THROW(exchange_round(m, 0, 0, 3, nb, *t0, inbox, 2000ms), ProtocolError);
  }
  {
    MemoryHub hub(3);
    auto t0 = hub.endpoint(0, {1, 2});
    auto t1 = hub.endpoint(1, {0});
    t1->send(0, model_msg(0, 1, m));
    RoundInbox inbox;
    std::vector<int> two{1, 2};
    try {
      exchange_round(m, 0, 0, 3, two, *t0, inbox, 200ms);
      FAIL();
    } catch (const TimeoutError& e) {
      EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
    }
  }
  {
    MemoryHub hub(2);
    auto t0 = hub.endpoint(0, {1});
    auto t1 = hub.endpoint(1, {0});
    t1->close();
    RoundInbox inbox;
    EXPECT_THROW(exchange_round(m, 0, 0, 3, nb, *t0, inbox, 2000ms), NetworkError);
  }
}

TEST(RunNode, SingleNodeIsLocalTraining) {
  auto cfg = fixtures::tiny_scenario(1, TopologyKind::fully, 3);
  MemoryHub hub(1);
  auto t = hub.endpoint(0, {});
  CaptureSink sink;
  NodeServices svc;
  svc.transport = t.get();
  svc.telemetry = &sink;
  svc.time_compression = 50;
  const auto s = run_node(cfg, 0, svc);
  ASSERT_EQ(s.status, "ok") << s.diagnostic;
  EXPECT_EQ(s.f1_per_round.size(), 3u);
  EXPECT_EQ(s.total_bytes_sent, 0u);
  ASSERT_EQ(sink.summaries.size(), 1u);
  EXPECT_EQ(sink.summaries[0], s);

  // Same trajectory as calling the model module directly.
  const auto data = load_scenario_data(cfg);
  auto p = init_model(cfg.model, mix_seed(cfg.master_seed, 4));
  const DatasetView shard(data.train, data.partition.shards[0]);
  for (int r = 0; r < cfg.rounds; ++r) {
    p = train_epochs(p, shard, 1, cfg.learning_rate, cfg.batch_size, mix_seed(node_seed(3, 0), 1000 + r)).first;
  }
  EXPECT_EQ(s.param_fingerprints.back(), params_fingerprint(p));
}

TEST(RunNode, TwoNodesAverageEachOther) {
  auto cfg = fixtures::tiny_scenario(2, TopologyKind::fully, 4);
  cfg.rounds = 1;
  MemoryHub hub(2);
  std::vector<std::unique_ptr<PeerTransport>> ts;
  ts.push_back(hub.endpoint(0, {1}));
  ts.push_back(hub.endpoint(1, {0}));
  std::vector<NodeSummary> out(2);
  std::vector<std::thread> th;
  for (int id = 0; id < 2; ++id) {
    th.emplace_back([&, id] {
      NodeServices svc;
      svc.transport = ts[id].get();
      svc.time_compression = 50;
      out[id] = run_node(cfg, id, svc);
    });
  }
  for (auto& t : th) t.join();
  ASSERT_FALSE(out[0].failed()) << out[0].diagnostic;
  ASSERT_FALSE(out[1].failed()) << out[1].diagnostic;

  const auto data = load_scenario_data(cfg);
  const auto p0 = init_model(cfg.model, mix_seed(cfg.master_seed, 4));
  std::vector<std::vector<double>> trained;
  for (int id = 0; id < 2; ++id) {
    const DatasetView shard(data.train, data.partition.shards[id]);
    trained.push_back(train_epochs(p0, shard, 1, cfg.learning_rate, cfg.batch_size,
                                   mix_seed(node_seed(4, id), 1000)).first.values);
  }
  ModelParams want = p0;
  for (std::size_t i = 0; i < want.values.size(); ++i) want.values[i] = (trained[0][i] + trained[1][i]) / 2;
  EXPECT_EQ(out[0].param_fingerprints[0], out[1].param_fingerprints[0]);
  // Equal weights over two models: (a+b)/2 is exact in both orders.
  EXPECT_EQ(out[0].param_fingerprints[0], params_fingerprint(want));
  const std::size_t frame = model_frame_size(serialized_size(cfg.model));
  EXPECT_EQ(out[0].total_bytes_sent, frame);
  EXPECT_EQ(out[0].total_bytes_recv, frame);
}

TEST(RunNode, MissingPeerFailsWithPhase) {
  auto cfg = fixtures::tiny_scenario(2, TopologyKind::fully, 4);
  MemoryHub hub(2);
  auto t0 = hub.endpoint(0, {1});
  CaptureSink sink;
  NodeServices svc;
  svc.transport = t0.get();
  svc.telemetry = &sink;
  svc.exchange_timeout = 200ms;
  svc.time_compression = 50;
  const auto s = run_node(cfg, 0, svc);
  EXPECT_TRUE(s.failed());
  EXPECT_NE(s.diagnostic.find("phase=EXCHANGING"), std::string::npos) << s.diagnostic;
  ASSERT_EQ(sink.summaries.size(), 1u);
  EXPECT_TRUE(sink.summaries[0].failed());
}

TEST(RunNode, UnreachableTelemetryDoesNotStopTraining) {
  auto cfg = fixtures::tiny_scenario(1, TopologyKind::fully, 3);
  cfg.rounds = 1;
  cfg.metric_interval_ms = 100;
  MemoryHub hub(1);
  auto t = hub.endpoint(0, {});
  HttpTelemetrySink dead(fmt::format("http://127.0.0.1:{}", net::probe_free_port()));
  NodeServices svc;
  svc.transport = t.get();
  svc.telemetry = &dead;
  svc.time_compression = 1;
  svc.edge_profile = EdgeProfile{0.3, 0.0};
  const auto s = run_node(cfg, 0, svc);
  EXPECT_FALSE(s.failed()) << s.diagnostic;
  EXPECT_EQ(s.f1_per_round.size(), 1u);
  EXPECT_GT(s.dropped_reports, 0u);
}
