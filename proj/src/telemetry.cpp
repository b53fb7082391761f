#include "fedmesh/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "fedmesh/error.hpp"

namespace fedmesh {

double simulate_power(double utilization, const MeterModel& m, Rng& noise) {
  if (!(utilization >= 0.0 && utilization <= 1.0)) {
    throw ValidationError(fmt::format("utilization {} outside [0,1]", utilization));
  }
  double p = m.idle_watts + m.load_coefficient_watts * utilization;
  if (m.noise_stddev_watts > 0.0) p += noise.normal(0.0, m.noise_stddev_watts);
  return std::max(p, 0.0);
}

double integrate_energy(std::span<const PowerSample> log) {
  double joules = 0.0;
  for (std::size_t i = 1; i < log.size(); ++i) {
    const auto dt_ms = log[i].timestamp_ms - log[i - 1].timestamp_ms;
    if (dt_ms <= 0) {
      throw ValidationError(fmt::format("power log timestamps not increasing at sample {}", i));
    }
    joules += 0.5 * (log[i].power_w + log[i - 1].power_w) * static_cast<double>(dt_ms) / 1000.0;
  }
  return joules;
}

double mean_power(std::span<const PowerSample> log) {
  if (log.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& s : log) sum += s.power_w;
  return sum / static_cast<double>(log.size());
}

void write_power_log(std::span<const PowerSample> log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("{}: cannot open for writing", path.string()));
  out << "timestamp_ms,voltage_v,current_a,power_w\n";
  for (const auto& s : log) {
    out << fmt::format("{},{:.6f},{:.6f},{:.6f}\n", s.timestamp_ms, s.voltage_v, s.current_a,
                       s.power_w);
  }
}

std::vector<PowerSample> read_power_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(fmt::format("{}: file not found", path.string()));
  std::string line;
  std::size_t line_no = 0;
  std::vector<PowerSample> log;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "timestamp_ms,voltage_v,current_a,power_w") {
        throw ParseError(fmt::format("{}:1: unexpected header", path.string()), 1);
      }
      continue;
    }
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) {
      throw ParseError(fmt::format("{}:{}: expected 4 columns", path.string(), line_no), line_no);
    }
    PowerSample s;
    try {
      std::size_t used = 0;
      s.timestamp_ms = std::stoll(cells[0], &used);
      if (used != cells[0].size()) throw std::invalid_argument(cells[0]);
      double* dst[] = {&s.voltage_v, &s.current_a, &s.power_w};
      for (int k = 0; k < 3; ++k) {
        *dst[k] = std::stod(cells[k + 1], &used);
        if (used != cells[k + 1].size()) throw std::invalid_argument(cells[k + 1]);
      }
    } catch (const std::exception&) {
      throw ParseError(fmt::format("{}:{}: malformed number", path.string(), line_no), line_no);
    }
    if (!log.empty() && s.timestamp_ms <= log.back().timestamp_ms) {
      throw ParseError(
          fmt::format("{}:{}: timestamps must be strictly increasing", path.string(), line_no),
          line_no);
    }
    log.push_back(s);
  }
  return log;
}

ResourceSample SimulatedResources::sample(LoadPhase phase, std::int64_t timestamp_ms) {
  ResourceSample s;
  s.timestamp_ms = timestamp_ms;
  const bool training = phase == LoadPhase::training;
  const double mean = training ? levels_.train_mean : levels_.idle_mean;
  const double sd = training ? levels_.train_stddev : levels_.idle_stddev;
  s.cpu_pct = std::clamp(sd > 0.0 ? rng_.normal(mean, sd) : mean, 0.0, 100.0);
  s.ram_pct = std::clamp(levels_.ram_stddev > 0.0 ? rng_.normal(levels_.ram_mean, levels_.ram_stddev)
                                                  : levels_.ram_mean,
                         0.0, 100.0);
  return s;
}

ResourceSample OsResources::sample(LoadPhase, std::int64_t timestamp_ms) {
  ResourceSample s;
  s.timestamp_ms = timestamp_ms;
  std::ifstream stat("/proc/stat");
  std::string cpu;
  std::uint64_t user = 0, nice = 0, system = 0, idle = 0, iowait = 0, irq = 0, softirq = 0,
                steal = 0;
  if (!(stat >> cpu >> user >> nice >> system >> idle >> iowait >> irq >> softirq >> steal) ||
      cpu != "cpu") {
    s.missing = true;
    return s;
  }
  const std::uint64_t busy = user + nice + system + irq + softirq + steal;
  const std::uint64_t total = busy + idle + iowait;
  if (total > last_total_ && last_total_ != 0) {
    s.cpu_pct = 100.0 * static_cast<double>(busy - last_busy_) /
                static_cast<double>(total - last_total_);
  }
  last_busy_ = busy;
  last_total_ = total;

  std::ifstream mem("/proc/meminfo");
  std::string key, unit;
  std::uint64_t value = 0, mem_total = 0, mem_avail = 0;
  while (mem >> key >> value >> unit) {
    if (key == "MemTotal:") mem_total = value;
    if (key == "MemAvailable:") mem_avail = value;
  }
  if (mem_total == 0) {
    s.missing = true;
    return s;
  }
  s.ram_pct = 100.0 * static_cast<double>(mem_total - mem_avail) / static_cast<double>(mem_total);
  s.cpu_pct = std::clamp(s.cpu_pct, 0.0, 100.0);
  s.ram_pct = std::clamp(s.ram_pct, 0.0, 100.0);
  return s;
}

std::optional<PowerSample> SimulatedMeter::read(std::int64_t timestamp_ms, double utilization) {
  PowerSample s;
  s.timestamp_ms = timestamp_ms;
  s.power_w = simulate_power(std::clamp(utilization, 0.0, 1.0), model_, rng_);
  s.voltage_v = kBusVolts;
  s.current_a = s.power_w / kBusVolts;
  return s;
}

std::optional<PowerSample> ReplayMeter::read(std::int64_t timestamp_ms, double) {
  if (log_.empty()) return std::nullopt;
  PowerSample s = log_[next_];
  next_ = (next_ + 1) % log_.size();
  s.timestamp_ms = timestamp_ms;
  return s;
}

std::unique_ptr<PowerMeter> make_meter(const MeterSpec& spec, std::uint64_t seed) {
  switch (spec.backend) {
    case MeterBackend::simulated:
      return std::make_unique<SimulatedMeter>(MeterModel{spec.idle_watts,
                                                         spec.load_coefficient_watts,
                                                         spec.noise_stddev_watts, seed});
    case MeterBackend::replay:
      return std::make_unique<ReplayMeter>(read_power_log(spec.replay_path.value_or("")));
    case MeterBackend::none:
      break;
  }
  return std::make_unique<NullMeter>();
}

std::int64_t TelemetryClock::now_ms() const {
  const auto elapsed = std::chrono::steady_clock::now() - origin_;
  const double ms = std::chrono::duration<double, std::milli>(elapsed).count() * scale_;
  return static_cast<std::int64_t>(ms);
}

Sampler::Sampler(ResourceSource& resources, PowerMeter& meter, const TelemetryClock& clock,
                 Options options, ReportFn on_report)
    : resources_(resources),
      meter_(meter),
      clock_(clock),
      options_(options),
      on_report_(std::move(on_report)) {}

Sampler::~Sampler() { stop(); }

void Sampler::start() {
  if (running_.exchange(true)) return;
  next_report_ms_ = 0;
  worker_ = std::thread([this] { loop(); });
}

void Sampler::stop() {
  if (!running_.exchange(false)) return;
  {
    std::lock_guard lock(wake_mu_);
  }
  wake_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
  tick(true);
}

void Sampler::tick(bool force) {
  std::int64_t ts = clock_.now_ms();
  ResourceSample rs;
  std::optional<PowerSample> ps;
  {
    std::lock_guard lock(mu_);
    if (!power_.empty() && ts <= power_.back().timestamp_ms) ts = power_.back().timestamp_ms + 1;
    if (!resources_log_.empty() && ts <= resources_log_.back().timestamp_ms) {
      ts = resources_log_.back().timestamp_ms + 1;
    }
    rs = resources_.sample(phase_.load(), ts);
    resources_log_.push_back(rs);
    if (force || ts >= next_sample_ms_) {
      next_sample_ms_ = ts + options_.sample_interval_ms;
      ps = meter_.read(ts, rs.missing ? 0.0 : rs.cpu_pct / 100.0);
      if (ps) power_.push_back(*ps);
    } else if (!power_.empty()) {
      ps = power_.back();
    }
  }
  if (on_report_ && (force || ts >= next_report_ms_)) {
    next_report_ms_ = ts + options_.report_interval_ms;
    on_report_(rs, ps);
  }
}

void Sampler::loop() {
  const double scale = clock_.scale() > 0.0 ? clock_.scale() : 1.0;
  const int step_ms = on_report_ ? std::min(options_.sample_interval_ms, options_.report_interval_ms)
                                 : options_.sample_interval_ms;
  const auto period = std::chrono::duration<double, std::milli>(step_ms / scale);
  auto next = std::chrono::steady_clock::now();
  while (running_.load()) {
    tick(false);
    next += std::chrono::duration_cast<std::chrono::steady_clock::duration>(period);
    std::unique_lock lock(wake_mu_);
    wake_cv_.wait_until(lock, next, [this] { return !running_.load(); });
  }
}

std::vector<PowerSample> Sampler::power_log() const {
  std::lock_guard lock(mu_);
  return power_;
}

std::vector<ResourceSample> Sampler::resource_log() const {
  std::lock_guard lock(mu_);
  return resources_log_;
}

}  // namespace fedmesh
