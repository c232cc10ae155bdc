#pragma once

/// Synthetic servo output-current traces and the trace CSV format.
///
/// Healthy runs start at a startup peak that decays (raised-cosine) to a
/// nominal cruise plateau with uniform noise on top. An overload fault ramps
/// linearly from the healthy baseline to an overload plateau, where current
/// fluctuates uniformly inside a band until shutdown (then zero) or the end of
/// the run. Each fluctuation level is held for `fluctuation_hold` seconds,
/// which gives the overload band a stepped texture distinct from cruise noise.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "servoguard/errors.hpp"

namespace servoguard {

inline constexpr std::size_t kWindowLength = 1024;

struct MotorProfile {
  double nominal_current = 1.0;   ///< A, cruise plateau
  double startup_peak = 1.8;      ///< A
  double startup_duration = 0.3;  ///< s, peak decays to nominal over this span
  double noise_amplitude = 0.05;  ///< A, healthy band is nominal +- this
  double sample_interval = 1e-3;  ///< s

  void validate() const {
    if (!(nominal_current > 0 && startup_peak > 0 && startup_duration > 0 && sample_interval > 0))
      throw ConfigError("motor profile: currents, durations and sample_interval must be > 0");
    if (!(noise_amplitude >= 0)) throw ConfigError("motor profile: noise_amplitude < 0");
    if (startup_peak < nominal_current) throw ConfigError("motor profile: startup_peak < nominal_current");
    if (noise_amplitude >= nominal_current) throw ConfigError("motor profile: noise_amplitude >= nominal_current");
  }

  /// Largest current a healthy segment can produce.
  double healthy_max() const { return startup_peak + noise_amplitude; }
};

struct FaultSpec {
  double onset_time = 2.0;       ///< s
  double rise_time = 0.05;       ///< s
  double plateau_mean = 3.0;     ///< A
  double plateau_band = 0.4;     ///< A, plateau fluctuates in mean +- band
  std::optional<double> shutdown_time;
  double fluctuation_hold = 0.02;  ///< s a fluctuation level persists; <= sample_interval means per-sample

  void validate(const MotorProfile& profile) const {
    if (!(onset_time >= 0)) throw ConfigError("fault: onset_time < 0");
    if (!(rise_time > 0)) throw ConfigError("fault: rise_time must be > 0");
    if (!(plateau_band >= 0)) throw ConfigError("fault: plateau_band < 0");
    if (!(fluctuation_hold >= 0)) throw ConfigError("fault: fluctuation_hold < 0");
    if (!(plateau_mean > 2 * profile.nominal_current))
      throw ConfigError("fault: plateau_mean must exceed 2x nominal_current");
    if (shutdown_time && !(*shutdown_time > onset_time)) throw ConfigError("fault: shutdown_time <= onset_time");
    if (!(profile.healthy_max() < plateau_mean - plateau_band))
      throw ConfigError("fault: overload band overlaps the healthy band");
  }
};

struct SignalTrace {
  std::vector<double> current;  ///< A, one per sample
  double sample_interval = 1e-3;
  double start_time = 0.0;
  std::optional<double> fault_onset;
  std::optional<double> shutdown_time;
  std::uint64_t rng_seed = 0;

  std::size_t size() const noexcept { return current.size(); }
  double time(std::size_t k) const noexcept { return start_time + static_cast<double>(k) * sample_interval; }
  double end_time() const noexcept { return current.empty() ? start_time : time(current.size() - 1); }

  /// True when sample k lies in [fault_onset, shutdown_time).
  bool in_fault(std::size_t k) const noexcept {
    if (!fault_onset) return false;
    const double t = time(k);
    return t >= *fault_onset && (!shutdown_time || t < *shutdown_time);
  }
};

/// Ohm's law on the sensed ground voltage across the shunt.
inline double sense_current(double voltage, double resistance) {
  if (!(resistance > 0)) throw DomainError("sense_current: resistance must be > 0");
  if (!(voltage >= 0)) throw DomainError("sense_current: voltage must be >= 0");
  return voltage / resistance;
}

namespace detail {

/// 53-bit uniform in [0,1) straight from the engine bits, so traces are identical across standard libraries.
inline double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double symmetric_uniform(std::mt19937_64& rng, double half_width) {
  return half_width * (2.0 * unit_uniform(rng) - 1.0);
}

inline double healthy_baseline(const MotorProfile& p, double t) {
  if (t >= p.startup_duration) return p.nominal_current;
  constexpr double pi = 3.14159265358979323846;
  return p.nominal_current + (p.startup_peak - p.nominal_current) * 0.5 * (1.0 + std::cos(pi * t / p.startup_duration));
}

}  // namespace detail

inline SignalTrace simulate_trace(const MotorProfile& profile, double duration, const std::optional<FaultSpec>& fault,
                                  std::uint64_t seed) {
  profile.validate();
  if (fault) fault->validate(profile);
  const double dt = profile.sample_interval;
  if (!(duration >= static_cast<double>(kWindowLength) * dt))
    throw ConfigError("simulate_trace: duration shorter than one 1024-sample window");

  const auto n = static_cast<std::size_t>(std::floor(duration / dt + 1e-9));
  if (fault && fault->onset_time > static_cast<double>(n - 1) * dt)
    throw ConfigError("simulate_trace: fault onset after the end of the trace");
  SignalTrace trace;
  trace.sample_interval = dt;
  trace.rng_seed = seed;
  trace.current.resize(n);
  if (fault) {
    trace.fault_onset = fault->onset_time;
    trace.shutdown_time = fault->shutdown_time;
  }

  // Separate streams keep the healthy noise independent of whether a fault is injected.
  std::mt19937_64 noise_rng(seed);
  std::mt19937_64 fault_rng(seed ^ 0x9E3779B97F4A7C15ull);
  const std::size_t hold_samples =
      fault ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fault->fluctuation_hold / dt))) : 1;
  double level = 0.0;
  std::size_t plateau_index = 0;

  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const double noise = detail::symmetric_uniform(noise_rng, profile.noise_amplitude);
    double value = detail::healthy_baseline(profile, t) + noise;
    if (fault && t >= fault->onset_time) {
      if (fault->shutdown_time && t >= *fault->shutdown_time) {
        value = 0.0;
      } else if (t < fault->onset_time + fault->rise_time) {
        const double base = detail::healthy_baseline(profile, fault->onset_time);
        value = base + (fault->plateau_mean - base) * (t - fault->onset_time) / fault->rise_time + noise;
      } else {
        if (plateau_index % hold_samples == 0) level = detail::symmetric_uniform(fault_rng, fault->plateau_band);
        ++plateau_index;
        value = fault->plateau_mean + level;
      }
    }
    trace.current[k] = std::max(0.0, value);
  }
  return trace;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size() && std::isfinite(out);
}

}  // namespace detail

/// Writes `time_s,current_a` CSV. Numbers use the shortest decimal form that
/// parses back to the same double, so write/read is lossless.
inline void write_trace(std::ostream& out, const SignalTrace& trace) {
  if (trace.fault_onset) out << "# fault_onset_s=" << detail::format_double(*trace.fault_onset) << '\n';
  if (trace.shutdown_time) out << "# shutdown_s=" << detail::format_double(*trace.shutdown_time) << '\n';
  out << "# seed=" << trace.rng_seed << '\n';
  out << "time_s,current_a\n";
  for (std::size_t k = 0; k < trace.size(); ++k)
    out << detail::format_double(trace.time(k)) << ',' << detail::format_double(trace.current[k]) << '\n';
}

inline std::string trace_to_csv(const SignalTrace& trace) {
  std::ostringstream os;
  write_trace(os, trace);
  return os.str();
}

inline SignalTrace read_trace(std::istream& in) {
  SignalTrace trace;
  std::vector<double> times;
  std::vector<std::size_t> line_of_sample;
  std::string line;
  std::size_t line_no = 0;
  bool seen_data = false;

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::string_view body(line);
      body.remove_prefix(1);
      while (!body.empty() && body.front() == ' ') body.remove_prefix(1);
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = body.substr(0, eq);
      const auto value = body.substr(eq + 1);
      double v = 0;
      if (key == "fault_onset_s" || key == "shutdown_s") {
        if (!detail::parse_double(value, v)) throw ParseError(line_no, "bad value for " + std::string(key));
        (key == "fault_onset_s" ? trace.fault_onset : trace.shutdown_time) = v;
      } else if (key == "seed") {
        std::uint64_t s = 0;
        auto res = std::from_chars(value.data(), value.data() + value.size(), s);
        if (res.ec != std::errc{}) throw ParseError(line_no, "bad seed");
        trace.rng_seed = s;
      }
      continue;
    }
    if (!seen_data && line.rfind("time_s", 0) == 0) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos)
      throw ParseError(line_no, "expected two comma-separated fields");
    double t = 0, c = 0;
    if (!detail::parse_double(std::string_view(line).substr(0, comma), t) ||
        !detail::parse_double(std::string_view(line).substr(comma + 1), c))
      throw ParseError(line_no, "malformed number");
    if (c < 0) throw ParseError(line_no, "negative current");
    if (!times.empty() && !(t > times.back())) throw ParseError(line_no, "time not strictly increasing");
    seen_data = true;
    times.push_back(t);
    trace.current.push_back(c);
    line_of_sample.push_back(line_no);
  }

  if (times.size() < 2) throw ParseError(line_no, "need at least two samples");
  const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  const double max_abs_t = std::max(std::abs(times.front()), std::abs(times.back()));
  const double slack = 1e-9 * dt + 8 * std::numeric_limits<double>::epsilon() * max_abs_t;
  // Each step is compared with the first, so the error names the line where spacing breaks.
  const double first = times[1] - times[0];
  for (std::size_t k = 2; k < times.size(); ++k) {
    if (std::abs((times[k] - times[k - 1]) - first) > slack)
      throw ParseError(line_of_sample[k], "inconsistent sample spacing");
  }
  trace.sample_interval = dt;
  trace.start_time = times.front();
  if (trace.fault_onset && (*trace.fault_onset < trace.start_time || *trace.fault_onset > times.back()))
    throw ParseError(line_no, "fault_onset outside the trace");
  return trace;
}

inline SignalTrace trace_from_csv(const std::string& text) {
  std::istringstream is(text);
  return read_trace(is);
}

}  // namespace servoguard
