#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "fedmesh/telemetry.hpp"

using namespace fedmesh;
using namespace std::chrono_literals;

namespace {
std::filesystem::path tmp(const char* name) {
  return std::filesystem::temp_directory_path() / name;
}
}  // namespace

TEST(Power, ClosedFormPoints) {
  MeterModel m;
  m.noise_stddev_watts = 0;
  Rng rng(1);
  EXPECT_NEAR(simulate_power(0.0, m, rng), 2.6, 1e-12);
  EXPECT_NEAR(simulate_power(0.27, m, rng), 3.356, 1e-12);
  EXPECT_NEAR(simulate_power(1.0, m, rng), 5.4, 1e-12);
  EXPECT_THROW(simulate_power(1.01, m, rng), ValidationError);
  EXPECT_THROW(simulate_power(-0.1, m, rng), ValidationError);
}

TEST(Power, NoiseStatistics) {
  MeterModel m;
  Rng rng(2);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double p = simulate_power(0.5, m, rng) - 4.0;
    s += p;
    s2 += p * p;
  }
  EXPECT_NEAR(s / n, 0.0, 0.002);
  EXPECT_NEAR(std::sqrt(s2 / n), 0.05, 0.002);
}

TEST(Energy, ConstantRamp) {
  std::vector<PowerSample> constant;
  for (int i = 0; i <= 425; ++i) constant.push_back({i * 1000, 5, 0.66, 3.3});
  constant.push_back({425450, 5, 0.66, 3.3});
  EXPECT_NEAR(integrate_energy(constant), 1403.985, 1e-9);
  std::vector<PowerSample> ramp;
  for (int i = 0; i <= 100; ++i) ramp.push_back({i * 1000, 5, 0, 0.04 * i});
  EXPECT_NEAR(integrate_energy(ramp), 200.0, 1e-9);
  EXPECT_EQ(integrate_energy({}), 0.0);
  EXPECT_EQ(integrate_energy(std::vector<PowerSample>{{0, 5, 1, 5}}), 0.0);
  std::vector<PowerSample> back{{0, 5, 1, 1}, {1000, 5, 1, 1}, {500, 5, 1, 1}};
  EXPECT_THROW(integrate_energy(back), ValidationError);
}

TEST(Energy, MeanPower) {
  std::vector<PowerSample> log{{0, 5, 0, 2}, {1000, 5, 0, 4}, {3000, 5, 0, 4}};
  EXPECT_NEAR(mean_power(log), 10.0 / 3.0, 1e-12);
  EXPECT_EQ(mean_power({}), 0.0);
}

TEST(PowerLog, RoundTrip) {
  Rng rng(5);
  std::vector<PowerSample> log;
  for (int i = 0; i < 425; ++i) {
    const double p = 3 + rng.uniform();
    log.push_back({i * 1000 + static_cast<int>(rng.below(5)), 5.0, p / 5.0, p});
  }
  write_power_log(log, tmp("fm_power.csv"));
  std::ifstream in(tmp("fm_power.csv"));
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "timestamp_ms,voltage_v,current_a,power_w");
  const auto back = read_power_log(tmp("fm_power.csv"));
  ASSERT_EQ(back.size(), log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(back[i].timestamp_ms, log[i].timestamp_ms);
    EXPECT_NEAR(back[i].power_w, log[i].power_w, 1e-6);
    EXPECT_NEAR(back[i].current_a, log[i].current_a, 1e-6);
  }
}

TEST(PowerLog, Errors) {
  const auto path = tmp("fm_bad.csv");
  std::ofstream(path) << "timestamp_ms,voltage_v,current_a,power_w\n";
  EXPECT_TRUE(read_power_log(path).empty());
  std::ofstream(path) << "timestamp_ms,voltage_v,current_a,power_w\n1000,5,1,5\n500,5,1,5\n";
  EXPECT_THROW(read_power_log(path), Error);
  std::ofstream(path) << "timestamp_ms,voltage_v,current_a,power_w\n0,5,1,5\nnope\n";
  try {
    read_power_log(path);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 3u);
  }
  std::filesystem::remove(path);
}

TEST(Resources, SimulatedLevels) {
  SimulatedResources::Levels tight;
  tight.train_stddev = tight.idle_stddev = tight.ram_stddev = 0;
  SimulatedResources src(1, tight);
  EXPECT_DOUBLE_EQ(src.sample(LoadPhase::training, 0).cpu_pct, 40.0);
  EXPECT_DOUBLE_EQ(src.sample(LoadPhase::idle, 0).cpu_pct, 8.0);
  SimulatedResources noisy(2);
  for (int i = 0; i < 1000; ++i) {
    const auto s = noisy.sample(i % 2 ? LoadPhase::training : LoadPhase::idle, i);
    EXPECT_GE(s.cpu_pct, 0.0);
    EXPECT_LE(s.cpu_pct, 100.0);
  }
}

TEST(Resources, OsSourceReadsProc) {
  OsResources os;
  os.sample(LoadPhase::idle, 0);
  std::this_thread::sleep_for(20ms);
  const auto s = os.sample(LoadPhase::idle, 20);
  if (!s.missing) {
    EXPECT_GE(s.cpu_pct, 0.0);
    EXPECT_LE(s.ram_pct, 100.0);
  }
}

TEST(Meters, SimulatedReadsAtFiveVolts) {
  SimulatedMeter m({2.6, 2.8, 0.0, 1});
  const auto s = m.read(10, 0.5);
  ASSERT_TRUE(s);
  EXPECT_DOUBLE_EQ(s->voltage_v, 5.0);
  EXPECT_NEAR(s->power_w, 4.0, 1e-12);
  EXPECT_NEAR(s->current_a * s->voltage_v, s->power_w, 1e-12);
  EXPECT_FALSE(NullMeter{}.read(0, 0.5));
  ReplayMeter empty({});
  EXPECT_FALSE(empty.read(0, 0));
  ReplayMeter r({{0, 5, 1, 5}, {1000, 5, 0.5, 2.5}});
  EXPECT_DOUBLE_EQ(r.read(0, 0)->power_w, 5);
  EXPECT_DOUBLE_EQ(r.read(1, 0)->power_w, 2.5);
  EXPECT_DOUBLE_EQ(r.read(2, 0)->power_w, 5);  // wraps around
}

TEST(Sampler, CoversRunAndReports) {
  SimulatedResources res(3);
  SimulatedMeter meter({2.6, 2.8, 0.05, 3});
  TelemetryClock clock(100.0);  // 100 ms of telemetry per wall ms
  std::atomic<int> reports = 0;
  Sampler sampler(res, meter, clock, {1000, 1000},
                  [&](const ResourceSample&, const std::optional<PowerSample>&) { ++reports; });
  sampler.start();
  sampler.set_phase(LoadPhase::training);
  std::this_thread::sleep_for(300ms);
  sampler.stop();
  const auto log = sampler.power_log();
  ASSERT_GE(log.size(), 10u);
  for (std::size_t i = 1; i < log.size(); ++i) EXPECT_GT(log[i].timestamp_ms, log[i - 1].timestamp_ms);
  EXPECT_GE(reports.load(), 10);
  EXPECT_GT(integrate_energy(log), 0.0);
}

TEST(Energy, AdditiveOverSharedBoundary) {
  Rng rng(8);
  std::vector<PowerSample> log;
  std::int64_t t = 0;
  for (int i = 0; i < 200; ++i) {
    t += 1 + static_cast<std::int64_t>(rng.below(2000));
    log.push_back({t, 5, 0, rng.uniform(2, 6)});
  }
  const std::span all(log);
  for (std::size_t cut : {1u, 57u, 150u, 198u}) {
    const double whole = integrate_energy(all);
    const double parts = integrate_energy(all.first(cut + 1)) + integrate_energy(all.subspan(cut));
    EXPECT_NEAR(whole, parts, 1e-9 * whole);
  }
  std::vector<PowerSample> flat{{1000, 5, 0, 3.7}, {2500, 5, 0, 3.7}, {9000, 5, 0, 3.7}};
  EXPECT_DOUBLE_EQ(integrate_energy(flat), 3.7 * 8.0);
}

TEST(Resources, SimulatedDeterministicAndBounded) {
  SimulatedResources a(5), b(5);
  for (int i = 0; i < 10000; ++i) {
    const auto phase = i % 3 ? LoadPhase::training : LoadPhase::idle;
    const auto sa = a.sample(phase, i), sb = b.sample(phase, i);
    ASSERT_EQ(sa.cpu_pct, sb.cpu_pct);
    ASSERT_EQ(sa.ram_pct, sb.ram_pct);
    ASSERT_GE(sa.cpu_pct, 0.0);
    ASSERT_LE(sa.cpu_pct, 100.0);
    ASSERT_GE(sa.ram_pct, 0.0);
    ASSERT_LE(sa.ram_pct, 100.0);
  }
}

TEST(Meters, PowerEqualsVoltsTimesAmps) {
  SimulatedMeter m({2.6, 2.8, 0.05, 9});
  Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const auto s = m.read(i, u.uniform());
    ASSERT_TRUE(s);
    ASSERT_LE(std::abs(s->power_w - s->voltage_v * s->current_a), 1e-6);
    ASSERT_GE(s->power_w, 0.0);
  }
}
