#pragma once

/// Labeled image datasets: sliding-window extraction from traces, the
/// 15:2:1 train/validation/test split, and the TRND container.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "servoguard/binary_io.hpp"
#include "servoguard/errors.hpp"
#include "servoguard/log.hpp"
#include "servoguard/signal.hpp"
#include "servoguard/transform.hpp"

namespace servoguard {

struct LabeledImage {
  FeatureImage image;
  std::uint8_t label = 0;  ///< 0 normal, 1 overload fault
  bool operator==(const LabeledImage&) const = default;
};

/// A window is labeled faulty when at least this many of its samples are inside the fault interval.
inline constexpr std::size_t kFaultSampleThreshold = 128;
inline constexpr std::size_t kDefaultHop = 256;

/// Start indices of every full window at the given hop.
inline std::vector<std::size_t> window_starts(std::size_t trace_length, std::size_t hop) {
  if (hop == 0) throw ConfigError("hop must be >= 1");
  std::vector<std::size_t> starts;
  if (trace_length < kWindowLength) return starts;
  for (std::size_t s = 0; s + kWindowLength <= trace_length; s += hop) starts.push_back(s);
  return starts;
}

inline Window window_at(const SignalTrace& trace, std::size_t start) {
  return Window(std::span<const double>(trace.current).subspan(start, kWindowLength), trace.sample_interval);
}

inline std::uint8_t window_label(const SignalTrace& trace, std::size_t start) {
  std::size_t faulty = 0;
  for (std::size_t k = start; k < start + kWindowLength; ++k) faulty += trace.in_fault(k) ? 1 : 0;
  return faulty >= kFaultSampleThreshold ? 1 : 0;
}

struct WindowingResult {
  std::vector<LabeledImage> images;
  bool too_short = false;  ///< warning: trace held less than one window
};

inline WindowingResult window_and_label(const SignalTrace& trace, std::size_t hop = kDefaultHop) {
  if (hop == 0) throw ConfigError("window_and_label: hop must be >= 1");
  WindowingResult result;
  if (trace.size() < kWindowLength) {
    result.too_short = true;
    log::info("trace of ", trace.size(), " samples is shorter than one window; no images emitted");
    return result;
  }
  for (std::size_t start : window_starts(trace.size(), hop)) {
    LabeledImage li;
    li.image = pid_transform(window_at(trace, start), start, trace.rng_seed);
    li.label = window_label(trace, start);
    result.images.push_back(li);
  }
  return result;
}

struct DatasetSplit {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> validation;
  std::vector<LabeledImage> test;
  std::uint64_t seed = 0;
  // Positions in the input sequence, parallel to the three vectors above.
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> validation_index;
  std::vector<std::size_t> test_index;
};

/// Split sizes for n images at 15:2:1 (validation and test round down, remainder to train).
struct SplitSizes {
  std::size_t train, validation, test;
};
inline SplitSizes split_sizes(std::size_t n) {
  const std::size_t validation = n * 2 / 18;
  const std::size_t test = n / 18;
  return {n - validation - test, validation, test};
}

inline double positive_fraction(std::span<const LabeledImage> images) {
  if (images.empty()) return 0.0;
  std::size_t pos = 0;
  for (const auto& li : images) pos += li.label;
  return static_cast<double>(pos) / static_cast<double>(images.size());
}

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  // Fisher-Yates with explicit modulo draws; std::shuffle's use of the engine is implementation-defined.
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

inline bool balanced(std::span<const LabeledImage> all, std::span<const std::size_t> part, double overall) {
  if (part.empty()) return true;
  std::size_t pos = 0;
  for (std::size_t i : part) pos += all[i].label;
  return std::abs(static_cast<double>(pos) / static_cast<double>(part.size()) - overall) <= 0.05;
}

}  // namespace detail

inline constexpr double kSplitBalanceTolerance = 0.05;

/// Seeded shuffle then 15/18, 2/18, 1/18 partition. If any part's positive
/// fraction is more than 5 percentage points off the whole, the split is
/// re-drawn stratified by class.
inline DatasetSplit split(std::span<const LabeledImage> images, std::uint64_t seed) {
  if (images.size() < 18) throw ConfigError("split: need at least 18 images, got " + std::to_string(images.size()));
  const SplitSizes sizes = split_sizes(images.size());
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  detail::shuffle_indices(order, rng);

  std::vector<std::size_t> tr(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes.train));
  std::vector<std::size_t> va(order.begin() + static_cast<std::ptrdiff_t>(sizes.train),
                              order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.validation));
  std::vector<std::size_t> te(order.begin() + static_cast<std::ptrdiff_t>(sizes.train + sizes.validation), order.end());

  const double overall = positive_fraction(images);
  if (!detail::balanced(images, tr, overall) || !detail::balanced(images, va, overall) ||
      !detail::balanced(images, te, overall)) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i : order) (images[i].label ? pos : neg).push_back(i);
    const auto pos_share = [&](std::size_t part) {
      return static_cast<std::size_t>(std::llround(overall * static_cast<double>(part)));
    };
    const std::size_t va_pos = std::min(pos_share(sizes.validation), pos.size());
    const std::size_t te_pos = std::min(pos_share(sizes.test), pos.size() - va_pos);
    tr.clear();
    va.clear();
    te.clear();
    std::size_t p = 0, q = 0;
    for (std::size_t k = 0; k < va_pos; ++k) va.push_back(pos[p++]);
    while (va.size() < sizes.validation) va.push_back(q < neg.size() ? neg[q++] : pos[p++]);
    for (std::size_t k = 0; k < te_pos && p < pos.size(); ++k) te.push_back(pos[p++]);
    while (te.size() < sizes.test) te.push_back(q < neg.size() ? neg[q++] : pos[p++]);
    while (p < pos.size()) tr.push_back(pos[p++]);
    while (q < neg.size()) tr.push_back(neg[q++]);
    detail::shuffle_indices(tr, rng);
    detail::shuffle_indices(va, rng);
    detail::shuffle_indices(te, rng);
  }

  DatasetSplit out;
  out.seed = seed;
  out.train_index = std::move(tr);
  out.validation_index = std::move(va);
  out.test_index = std::move(te);
  for (std::size_t i : out.train_index) out.train.push_back(images[i]);
  for (std::size_t i : out.validation_index) out.validation.push_back(images[i]);
  for (std::size_t i : out.test_index) out.test.push_back(images[i]);
  return out;
}

// ---------------------------------------------------------------------------
// TRND container: "TRND" | version u16 | count u32 | count x (3072 f32 + label u8) | CRC-32 u32

inline constexpr std::array<std::uint8_t, 4> kDatasetMagic{'T', 'R', 'N', 'D'};
inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 10;
inline constexpr std::size_t kDatasetRecordBytes = kImageSize * 4 + 1;
inline constexpr std::size_t kDatasetTrailerBytes = 4;

inline std::size_t dataset_file_size(std::size_t count) {
  return kDatasetHeaderBytes + count * kDatasetRecordBytes + kDatasetTrailerBytes;
}

inline Bytes save_dataset(std::span<const LabeledImage> images) {
  Bytes out;
  out.reserve(dataset_file_size(images.size()));
  ByteWriter w(out);
  for (std::uint8_t b : kDatasetMagic) w.u8(b);
  w.u16(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(images.size()));
  for (const auto& li : images) {
    for (float v : li.image.pixels) w.f32(v);
    w.u8(li.label);
  }
  w.u32(crc32_ieee(out));
  return out;
}

inline std::vector<LabeledImage> load_dataset(std::span<const std::uint8_t> blob) {
  using Code = LoadError::Code;
  if (blob.size() < kDatasetHeaderBytes + kDatasetTrailerBytes)
    throw LoadError(Code::truncated, "dataset: file too short");
  if (!std::equal(kDatasetMagic.begin(), kDatasetMagic.end(), blob.begin()))
    throw LoadError(Code::bad_magic, "dataset: bad magic");
  ByteReader r(blob);
  r.u32();
  const std::uint16_t version = r.u16();
  if (version != kDatasetVersion)
    throw LoadError(Code::bad_version, "dataset: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  if (blob.size() != dataset_file_size(count))
    throw LoadError(Code::truncated, "dataset: length " + std::to_string(blob.size()) + " != expected " +
                                         std::to_string(dataset_file_size(count)));
  const std::size_t body = blob.size() - kDatasetTrailerBytes;
  {
    ByteReader tail(blob.subspan(body));
    if (tail.u32() != crc32_ieee(blob.first(body))) throw LoadError(Code::checksum, "dataset: CRC mismatch");
  }
  std::vector<LabeledImage> images(count);
  for (auto& li : images) {
    for (auto& v : li.image.pixels) {
      v = r.f32();
      if (!(v >= 0.0f && v <= 1.0f)) throw LoadError(Code::shape_mismatch, "dataset: pixel outside [0,1]");
    }
    li.label = r.u8();
    if (li.label > 1) throw LoadError(Code::shape_mismatch, "dataset: label outside {0,1}");
  }
  return images;
}

inline void save_dataset_file(const std::filesystem::path& path, std::span<const LabeledImage> images) {
  write_file_atomic(path, save_dataset(images));
}

inline std::vector<LabeledImage> load_dataset_file(const std::filesystem::path& path) {
  const Bytes blob = read_file(path);
  return load_dataset(blob);
}

// ---------------------------------------------------------------------------
// Synthetic corpus

struct SyntheticConfig {
  double duration = 12.0;  ///< s per simulated run
  std::size_t hop = kDefaultHop;
  double sample_interval = 1e-3;
};

/// Draws a randomized run. Amplitude scales vary per run so that no absolute
/// current level identifies the class.
inline SignalTrace random_trace(std::uint64_t seed, bool faulty, const SyntheticConfig& cfg = {}) {
  std::mt19937_64 rng(seed * 0x2545F4914F6CDD1Dull + 0x632BE59BD9B4E019ull);
  const auto uni = [&](double lo, double hi) { return lo + (hi - lo) * detail::unit_uniform(rng); };
  MotorProfile p;
  p.sample_interval = cfg.sample_interval;
  p.nominal_current = uni(0.5, 2.0);
  p.startup_peak = p.nominal_current * uni(1.3, 2.0);
  p.startup_duration = uni(0.1, 0.5);
  p.noise_amplitude = p.nominal_current * uni(0.02, 0.08);
  std::optional<FaultSpec> fault;
  if (faulty) {
    FaultSpec f;
    f.onset_time = uni(0.5, std::max(0.6, cfg.duration - 2.0));
    f.rise_time = uni(0.02, 0.1);
    f.plateau_mean = p.nominal_current * uni(2.6, 3.4);
    f.plateau_band = p.nominal_current * uni(0.1, 0.4);
    f.fluctuation_hold = uni(0.01, 0.03);
    if (detail::unit_uniform(rng) < 0.3) {
      const double stop = f.onset_time + uni(2.0, 4.0);
      if (stop < cfg.duration) f.shutdown_time = stop;
    }
    fault = f;
  }
  return simulate_trace(p, cfg.duration, fault, seed);
}

/// Exactly `count` labeled images from alternating healthy/faulty random runs.
inline std::vector<LabeledImage> synthesize_images(std::size_t count, std::uint64_t seed,
                                                   const SyntheticConfig& cfg = {}) {
  std::vector<LabeledImage> images;
  images.reserve(count);
  for (std::uint64_t run = 0; images.size() < count; ++run) {
    const SignalTrace trace = random_trace(seed * 1000003ull + run, run % 2 == 1, cfg);
    for (auto& li : window_and_label(trace, cfg.hop).images) {
      if (images.size() == count) break;
      images.push_back(std::move(li));
    }
  }
  return images;
}

}  // namespace servoguard
