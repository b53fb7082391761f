#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "fedmesh/rng.hpp"
#include "fedmesh/scenario.hpp"

namespace fedmesh {

struct PowerSample {
  std::int64_t timestamp_ms = 0;
  double voltage_v = 0.0;
  double current_a = 0.0;
  double power_w = 0.0;

  bool operator==(const PowerSample&) const = default;
};

struct ResourceSample {
  std::int64_t timestamp_ms = 0;
  double cpu_pct = 0.0;
  double ram_pct = 0.0;
  bool missing = false;
};

struct MeterModel {
  double idle_watts = 2.6;
  double load_coefficient_watts = 2.8;
  double noise_stddev_watts = 0.05;
  std::uint64_t seed = 0;
};

enum class LoadPhase { idle, training };

// P = idle + c*u + N(0, sigma^2), clamped at zero. Throws ValidationError
// when u is outside [0, 1]. The generator is only drawn from when sigma > 0.
double simulate_power(double utilization, const MeterModel& m, Rng& noise);

// Trapezoidal rule over (seconds, watts). Fewer than two samples -> 0.
// Throws ValidationError on non-increasing timestamps.
double integrate_energy(std::span<const PowerSample> log);

double mean_power(std::span<const PowerSample> log);

// CSV: timestamp_ms,voltage_v,current_a,power_w (6 decimals).
void write_power_log(std::span<const PowerSample> log, const std::filesystem::path& path);
// Throws ParseError naming the line number for malformed rows or
// non-increasing timestamps.
std::vector<PowerSample> read_power_log(const std::filesystem::path& path);

class ResourceSource {
 public:
  virtual ~ResourceSource() = default;
  virtual ResourceSample sample(LoadPhase phase, std::int64_t timestamp_ms) = 0;
};

// Two-level CPU pattern: training ~ N(40, 5^2), idle/exchange ~ N(8, 2^2),
// both clipped to [0, 100]. RAM ~ N(33, 0.5^2).
class SimulatedResources final : public ResourceSource {
 public:
  struct Levels {
    double train_mean = 40.0, train_stddev = 5.0;
    double idle_mean = 8.0, idle_stddev = 2.0;
    double ram_mean = 33.0, ram_stddev = 0.5;
  };

  explicit SimulatedResources(std::uint64_t seed) : rng_(seed) {}
  SimulatedResources(std::uint64_t seed, Levels levels) : rng_(seed), levels_(levels) {}

  ResourceSample sample(LoadPhase phase, std::int64_t timestamp_ms) override;

 private:
  Rng rng_;
  Levels levels_;
};

// /proc/stat and /proc/meminfo. Unreadable sources yield missing samples.
class OsResources final : public ResourceSource {
 public:
  ResourceSample sample(LoadPhase phase, std::int64_t timestamp_ms) override;

 private:
  std::uint64_t last_busy_ = 0;
  std::uint64_t last_total_ = 0;
};

class PowerMeter {
 public:
  virtual ~PowerMeter() = default;
  // nullopt when the backend has no reading.
  virtual std::optional<PowerSample> read(std::int64_t timestamp_ms, double utilization) = 0;
};

class SimulatedMeter final : public PowerMeter {
 public:
  static constexpr double kBusVolts = 5.0;

  explicit SimulatedMeter(MeterModel model) : model_(model), rng_(model.seed) {}
  std::optional<PowerSample> read(std::int64_t timestamp_ms, double utilization) override;

 private:
  MeterModel model_;
  Rng rng_;
};

// Plays back a recorded log in order (wrapping), restamped with the caller's
// clock.
class ReplayMeter final : public PowerMeter {
 public:
  explicit ReplayMeter(std::vector<PowerSample> log) : log_(std::move(log)) {}
  std::optional<PowerSample> read(std::int64_t timestamp_ms, double utilization) override;

 private:
  std::vector<PowerSample> log_;
  std::size_t next_ = 0;
};

class NullMeter final : public PowerMeter {
 public:
  std::optional<PowerSample> read(std::int64_t, double) override { return std::nullopt; }
};

std::unique_ptr<PowerMeter> make_meter(const MeterSpec& spec, std::uint64_t seed);

// Milliseconds since construction, multiplied by `scale` (time compression).
class TelemetryClock {
 public:
  explicit TelemetryClock(double scale = 1.0)
      : origin_(std::chrono::steady_clock::now()), scale_(scale) {}
  std::int64_t now_ms() const;
  double scale() const { return scale_; }

 private:
  std::chrono::steady_clock::time_point origin_;
  double scale_;
};

// Periodic sampler running on its own thread. Keeps the power and resource
// logs; the logs may be snapshotted while sampling continues.
class Sampler {
 public:
  using ReportFn = std::function<void(const ResourceSample&, const std::optional<PowerSample>&)>;

  struct Options {
    int sample_interval_ms = 1000;  // in telemetry-clock time
    int report_interval_ms = 1000;
  };

  Sampler(ResourceSource& resources, PowerMeter& meter, const TelemetryClock& clock,
          Options options, ReportFn on_report = {});
  ~Sampler();
  Sampler(const Sampler&) = delete;
  Sampler& operator=(const Sampler&) = delete;

  void start();
  // Takes one final sample so the log covers the full run, then joins.
  void stop();

  void set_phase(LoadPhase phase) { phase_.store(phase); }

  std::vector<PowerSample> power_log() const;
  std::vector<ResourceSample> resource_log() const;

 private:
  void tick(bool force);
  void loop();

  ResourceSource& resources_;
  PowerMeter& meter_;
  const TelemetryClock& clock_;
  Options options_;
  ReportFn on_report_;
  std::atomic<LoadPhase> phase_{LoadPhase::idle};
  std::atomic<bool> running_{false};
  std::thread worker_;
  std::mutex wake_mu_;
  std::condition_variable wake_cv_;
  mutable std::mutex mu_;
  std::vector<PowerSample> power_;
  std::vector<ResourceSample> resources_log_;
  std::int64_t next_report_ms_ = 0;
  std::int64_t next_sample_ms_ = 0;
};

}  // namespace fedmesh
