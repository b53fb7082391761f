#include <gtest/gtest.h>

#include <algorithm>

#include "fedmesh/scenario.hpp"
#include "support/fixtures.hpp"

using namespace fedmesh;

namespace {

const char* kMinimalMnist = R"({
  "participants": [
    {"node_id": 0, "config_port": 9000, "peer_port": 9100},
    {"node_id": 1, "config_port": 9001, "peer_port": 9101},
    {"node_id": 2, "config_port": 9002, "peer_port": 9102},
    {"node_id": 3, "config_port": 9003, "peer_port": 9103}
  ],
  "topology": {"kind": "fully"},
  "dataset": {"source": "mnist", "data_dir": "data/mnist"}
})";

bool has_field(const std::vector<Violation>& vs, const std::string& field) {
  return std::any_of(vs.begin(), vs.end(), [&](const Violation& v) { return v.field == field; });
}

}  // namespace

TEST(Scenario, MinimalDocumentTakesDefaults) {
  const auto cfg = parse_scenario(kMinimalMnist);
  EXPECT_EQ(cfg.node_count(), 4);
  EXPECT_EQ(cfg.rounds, 10);
  EXPECT_EQ(cfg.local_epochs, 1);
  EXPECT_EQ(cfg.batch_size, 32);
  EXPECT_DOUBLE_EQ(cfg.learning_rate, 0.01);
  EXPECT_EQ(cfg.metric_interval_ms, 1000);
  EXPECT_EQ(cfg.model.input_dim, 784);
  EXPECT_EQ(cfg.model.hidden_dims, std::vector<int>{128});
  EXPECT_EQ(cfg.model.output_dim, 10);
  EXPECT_EQ(cfg.participants[2].host, "127.0.0.1");
}

TEST(Scenario, RoundsZeroNamesRounds) {
  std::string doc = kMinimalMnist;
  doc.insert(doc.size() - 1, R"(, "rounds": 0)");
  try {
    parse_scenario(doc);
    FAIL() << "expected InvalidScenario";
  } catch (const InvalidScenario& e) {
    EXPECT_TRUE(has_field(e.violations(), "rounds"));
  }
}

TEST(Scenario, MalformedJsonReportsPosition) {
  try {
    parse_scenario(R"({"participants": [ )");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GT(e.position(), 0u);
  }
}

TEST(Scenario, UnknownTopologyKindIsValidationError) {
  std::string doc = kMinimalMnist;
  doc.replace(doc.find("\"fully\""), 7, "\"mesh\"");
  EXPECT_THROW(parse_scenario(doc), ValidationError);
}

TEST(Scenario, MissingRequiredFieldIsNamed) {
  try {
    parse_scenario(R"({"participants": [], "dataset": {"source": "mnist"}})");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("topology"), std::string::npos) << e.what();
  }
}

TEST(Scenario, SerializeParseRoundTrip) {
  auto cfg = fixtures::synth_scenario(4, TopologyKind::random, 77);
  cfg.power_meter.noise_stddev_watts = 0.125;
  cfg.learning_rate = 0.0375;
  const auto back = parse_scenario(serialize_scenario(cfg));
  EXPECT_EQ(back, cfg);
  const auto mnist = parse_scenario(kMinimalMnist);
  EXPECT_EQ(parse_scenario(serialize_scenario(mnist)), mnist);
}

TEST(Scenario, ValidConfigHasNoViolations) {
  EXPECT_TRUE(validate_scenario(fixtures::synth_scenario(4, TopologyKind::fully)).empty());
}

TEST(Scenario, DuplicateNodeIdGivesOneViolation) {
  auto cfg = fixtures::synth_scenario(4, TopologyKind::fully);
  cfg.participants[3].node_id = 2;
  const auto vs = validate_scenario(cfg);
  const auto n = std::count_if(vs.begin(), vs.end(), [](const Violation& v) {
    return v.field.find("participants[") == 0 && v.field.find("].node_id") != std::string::npos;
  });
  EXPECT_EQ(n, 1) << vs.size();
}

TEST(Scenario, HubOutOfRange) {
  auto cfg = fixtures::synth_scenario(4, TopologyKind::star);
  cfg.topology.hub_id = 9;
  const auto vs = validate_scenario(cfg);
  ASSERT_TRUE(has_field(vs, "topology.hub_id"));
  EXPECT_TRUE(std::any_of(vs.begin(), vs.end(), [](const Violation& v) {
    return v.message.find("hub_id out of range") != std::string::npos;
  }));
}

TEST(Scenario, OtherInvariants) {
  auto cfg = fixtures::synth_scenario(4, TopologyKind::random);
  cfg.topology.edge_probability = 0.0;
  cfg.local_epochs = 0;
  cfg.participants[1].config_port = 70000;
  cfg.participants[2].peer_port = cfg.participants[0].config_port;  // endpoint clash
  cfg.dataset.test_fraction = 1.0;
  cfg.model.output_dim = 7;
  const auto vs = validate_scenario(cfg);
  EXPECT_TRUE(has_field(vs, "topology.edge_probability"));
  EXPECT_TRUE(has_field(vs, "local_epochs"));
  EXPECT_TRUE(has_field(vs, "participants[1].config_port"));
  EXPECT_TRUE(has_field(vs, "dataset.test_fraction"));
  EXPECT_TRUE(has_field(vs, "model.output_dim"));
  EXPECT_GE(vs.size(), 6u);
}

TEST(Scenario, SyntheticPresenceMatchesSource) {
  auto cfg = fixtures::synth_scenario(4, TopologyKind::fully);
  cfg.dataset.synthetic.reset();
  EXPECT_FALSE(validate_scenario(cfg).empty());
  auto mnist = parse_scenario(kMinimalMnist);
  mnist.dataset.synthetic = SyntheticSpec{10, 784, 10, 0.1};
  EXPECT_FALSE(validate_scenario(mnist).empty());
}

TEST(Scenario, ReplayPathIffReplayBackend) {
  auto cfg = fixtures::synth_scenario(4, TopologyKind::fully);
  cfg.power_meter.backend = MeterBackend::replay;
  EXPECT_TRUE(has_field(validate_scenario(cfg), "power_meter.replay_path"));
  cfg.power_meter.replay_path = "log.csv";
  EXPECT_TRUE(validate_scenario(cfg).empty());
}

TEST(Scenario, ValidateIsPure) {
  auto cfg = fixtures::synth_scenario(3, TopologyKind::ring);
  cfg.rounds = -1;
  cfg.participants[0].node_id = 5;
  EXPECT_EQ(validate_scenario(cfg), validate_scenario(cfg));
}

TEST(Scenario, MissingFileMessage) {
  try {
    load_scenario_file("/nonexistent/missing.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("file not found"), std::string::npos);
  }
}
