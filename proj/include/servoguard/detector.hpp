#pragma once

/// Streaming overload detector for the on-device scenario.
///
/// Samples enter a 1024-slot ring buffer. Every `hop` samples once the buffer
/// is full, the current window is transformed and classified, then a k-of-m
/// debounce decides whether to trip. The trip latch stays set until reset().

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include "servoguard/dataset.hpp"
#include "servoguard/errors.hpp"
#include "servoguard/log.hpp"
#include "servoguard/network.hpp"
#include "servoguard/signal.hpp"
#include "servoguard/transform.hpp"

namespace servoguard {

struct Debounce {
  std::size_t k = 2;
  std::size_t m = 3;
};

struct DetectorConfig {
  std::size_t hop = kDefaultHop;
  Debounce debounce{};
  double score_threshold = 0.5;

  void validate() const {
    if (hop == 0) throw ConfigError("detector: hop must be >= 1");
    if (debounce.k == 0 || debounce.k > debounce.m) throw ConfigError("detector: need 1 <= k <= m");
    if (!(score_threshold > 0 && score_threshold < 1)) throw ConfigError("detector: threshold must lie in (0,1)");
  }
};

struct Verdict {
  std::uint64_t window_seq = 0;
  double fault_probability = 0;
  bool is_fault = false;
  bool tripped = false;
  bool inference_error = false;  ///< classification failed; the latch was set fail-safe
  std::size_t last_sample = 0;   ///< index of the newest sample in the window
  bool operator==(const Verdict&) const = default;
};

/// Fixed 1024-sample ring with window-ready bookkeeping.
class WindowAssembler {
public:
  explicit WindowAssembler(std::size_t hop) : hop_(hop) {
    if (hop == 0) throw ConfigError("window assembler: hop must be >= 1");
  }

  /// Returns true when a window should be evaluated after this sample.
  bool push(double sample) {
    ring_[head_] = sample;
    head_ = (head_ + 1) % kWindowLength;
    ++count_;
    return count_ >= kWindowLength && (count_ - kWindowLength) % hop_ == 0;
  }

  /// Oldest-to-newest copy of the buffer.
  Series window() const {
    Series out{};
    for (std::size_t i = 0; i < kWindowLength; ++i) out[i] = ring_[(head_ + i) % kWindowLength];
    return out;
  }

  std::uint64_t count() const noexcept { return count_; }
  static constexpr std::size_t capacity() noexcept { return kWindowLength; }
  void reset() noexcept {
    head_ = 0;
    count_ = 0;
    ring_.fill(0.0);
  }

private:
  std::array<double, kWindowLength> ring_{};
  std::size_t head_ = 0;
  std::uint64_t count_ = 0;
  std::size_t hop_;
};

/// k-of-m vote with a monotone latch.
class Debouncer {
public:
  explicit Debouncer(Debounce d) : d_(d) {
    if (d.k == 0 || d.k > d.m) throw ConfigError("debounce: need 1 <= k <= m");
  }

  bool update(bool is_fault) {
    recent_.push_back(is_fault);
    if (recent_.size() > d_.m) recent_.pop_front();
    std::size_t faults = 0;
    for (bool f : recent_) faults += f ? 1 : 0;
    if (faults >= d_.k) tripped_ = true;
    return tripped_;
  }

  void force_trip() noexcept { tripped_ = true; }
  bool tripped() const noexcept { return tripped_; }
  void reset() {
    recent_.clear();
    tripped_ = false;
  }

private:
  Debounce d_;
  std::deque<bool> recent_;
  bool tripped_ = false;
};

/// Fault probability of a window from a read-only 32-bit network. Many
/// classifiers may share one network across threads; each owns its workspace.
class FaultClassifier {
public:
  explicit FaultClassifier(const nn::Network<float>& net) : net_(&net) {}

  double fault_probability(const FeatureImage& img) {
    input_.assign(img.pixels.begin(), img.pixels.end());
    const auto out = nn::forward<float>(*net_, input_, ws_);
    if (out.probabilities.size() != 2) throw StructuralError("classifier: network must have two outputs");
    return static_cast<double>(out.probabilities[1]);
  }

private:
  const nn::Network<float>* net_;
  nn::Workspace<float> ws_;
  std::vector<float> input_;
};

/// Classifies one already-transformed image and folds it into the debounce.
/// Shared by the streaming detector, the batch oracle, and the wire server.
class VerdictEngine {
public:
  VerdictEngine(const nn::Network<float>& net, const DetectorConfig& cfg)
      : cfg_((cfg.validate(), cfg)), classifier_(net), debouncer_(cfg.debounce) {}

  Verdict judge(const FeatureImage& img, std::uint64_t seq) {
    Verdict v;
    v.window_seq = seq;
    try {
      v.fault_probability = classifier_.fault_probability(img);
      v.is_fault = v.fault_probability >= cfg_.score_threshold;
      v.tripped = debouncer_.update(v.is_fault);
    } catch (const Error& e) {
      log::error("inference failed on window ", seq, ": ", e.what(), "; tripping fail-safe");
      v.inference_error = true;
      v.is_fault = true;
      v.fault_probability = 1.0;
      debouncer_.force_trip();
      v.tripped = true;
    }
    return v;
  }

  bool tripped() const noexcept { return debouncer_.tripped(); }
  void reset() { debouncer_.reset(); }
  const DetectorConfig& config() const noexcept { return cfg_; }

private:
  DetectorConfig cfg_;
  FaultClassifier classifier_;
  Debouncer debouncer_;
};

class StreamingDetector {
public:
  StreamingDetector(const nn::Network<float>& net, DetectorConfig cfg, double sample_interval = 1e-3)
      : engine_(net, cfg), assembler_(cfg.hop), dt_(sample_interval) {
    if (!(sample_interval > 0)) throw ConfigError("detector: sample_interval must be > 0");
  }

  std::optional<Verdict> push_sample(double amps) {
    if (!assembler_.push(amps)) return std::nullopt;
    const Series w = assembler_.window();
    Verdict v = engine_.judge(pid_transform(Window(w, dt_)), seq_++);
    v.last_sample = static_cast<std::size_t>(assembler_.count() - 1);
    return v;
  }

  bool tripped() const noexcept { return engine_.tripped(); }
  std::uint64_t samples_seen() const noexcept { return assembler_.count(); }

  /// Clears the latch and the buffered samples.
  void reset() {
    engine_.reset();
    assembler_.reset();
    seq_ = 0;
  }

private:
  VerdictEngine engine_;
  WindowAssembler assembler_;
  double dt_;
  std::uint64_t seq_ = 0;
};

inline std::vector<Verdict> stream_verdicts(const nn::Network<float>& net, const SignalTrace& trace,
                                            const DetectorConfig& cfg) {
  StreamingDetector det(net, cfg, trace.sample_interval);
  std::vector<Verdict> out;
  for (double x : trace.current)
    if (auto v = det.push_sample(x)) out.push_back(*v);
  return out;
}

/// Offline oracle: fixed windowing of the whole trace, no ring buffer.
inline std::vector<Verdict> batch_verdicts(const nn::Network<float>& net, const SignalTrace& trace,
                                           const DetectorConfig& cfg) {
  VerdictEngine engine(net, cfg);
  std::vector<Verdict> out;
  std::uint64_t seq = 0;
  for (std::size_t start : window_starts(trace.size(), cfg.hop)) {
    Verdict v = engine.judge(pid_transform(window_at(trace, start), start, trace.rng_seed), seq++);
    v.last_sample = start + kWindowLength - 1;
    out.push_back(v);
  }
  return out;
}

struct LatencyResult {
  bool detected = false;
  double seconds = std::numeric_limits<double>::infinity();  ///< onset to first tripped verdict
  std::size_t trip_sample = 0;
};

/// Index of the sample at which a fresh detector first trips on this trace.
inline std::optional<std::size_t> first_trip(const nn::Network<float>& net, const SignalTrace& trace,
                                             const DetectorConfig& cfg) {
  StreamingDetector det(net, cfg, trace.sample_interval);
  for (std::size_t k = 0; k < trace.size(); ++k) {
    const auto v = det.push_sample(trace.current[k]);
    if (v && v->tripped) return k;
  }
  return std::nullopt;
}

/// Onset-to-trip time. A trace without a fault onset, or one that never trips, is a miss.
inline LatencyResult detection_latency(const nn::Network<float>& net, const SignalTrace& trace,
                                       const DetectorConfig& cfg) {
  LatencyResult r;
  if (!trace.fault_onset) return r;
  if (const auto k = first_trip(net, trace, cfg)) {
    r.detected = true;
    r.trip_sample = *k;
    r.seconds = trace.time(*k) - *trace.fault_onset;
  }
  return r;
}

/// `seq,probability,is_fault,tripped`
inline void write_verdict_header(std::ostream& out) { out << "seq,probability,is_fault,tripped\n"; }
inline void write_verdict(std::ostream& out, const Verdict& v) {
  out << v.window_seq << ',' << v.fault_probability << ',' << (v.is_fault ? 1 : 0) << ',' << (v.tripped ? 1 : 0)
      << '\n';
}

}  // namespace servoguard
