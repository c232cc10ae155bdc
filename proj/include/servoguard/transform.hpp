#pragma once

/// Proportional / integral / derivative transform of a 1024-sample current
/// window into a normalized 3x32x32 image.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>

#include "servoguard/errors.hpp"
#include "servoguard/signal.hpp"

namespace servoguard {

inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kPlaneSize = kImageSide * kImageSide;
inline constexpr std::size_t kImageSize = kImageChannels * kPlaneSize;
static_assert(kPlaneSize == kWindowLength);

using Series = std::array<double, kWindowLength>;

struct Window {
  Series values{};
  double sample_interval = 1e-3;

  Window() = default;
  Window(std::span<const double> samples, double dt) : sample_interval(dt) {
    if (samples.size() != kWindowLength) throw ConfigError("window: expected exactly 1024 samples");
    if (!(dt > 0)) throw ConfigError("window: sample_interval must be > 0");
    std::copy(samples.begin(), samples.end(), values.begin());
  }
};

/// Channel order inside an image and inside RawChannels.
enum class Channel : std::size_t { raw = 0, integral = 1, derivative = 2 };

/// The three un-normalized channels in 32-bit floats, laid out channel-major.
/// This is exactly what crosses the serial link in the external-processor setup.
struct RawChannels {
  std::array<float, kImageSize> values{};

  std::span<float, kWindowLength> channel(Channel c) {
    return std::span<float, kWindowLength>(values.data() + static_cast<std::size_t>(c) * kWindowLength,
                                           kWindowLength);
  }
  std::span<const float, kWindowLength> channel(Channel c) const {
    return std::span<const float, kWindowLength>(values.data() + static_cast<std::size_t>(c) * kWindowLength,
                                                 kWindowLength);
  }
  bool operator==(const RawChannels&) const = default;
};

struct FeatureImage {
  std::array<float, kImageSize> pixels{};  ///< [channel][row][col], every value in [0,1]
  std::size_t window_start = 0;
  std::uint64_t trace_id = 0;

  float at(std::size_t channel, std::size_t row, std::size_t col) const {
    return pixels[channel * kPlaneSize + row * kImageSide + col];
  }
  bool operator==(const FeatureImage& o) const { return pixels == o.pixels; }
};

/// Cumulative trapezoid, reset to zero at the window start.
inline Series integrate(const Window& w) {
  Series out{};
  const double h = 0.5 * w.sample_interval;
  for (std::size_t k = 1; k < kWindowLength; ++k) out[k] = out[k - 1] + h * (w.values[k - 1] + w.values[k]);
  return out;
}

/// Central differences inside, first-order one-sided differences at both ends.
inline Series differentiate(const Window& w) {
  Series out{};
  const auto& v = w.values;
  const double dt = w.sample_interval;
  out[0] = (v[1] - v[0]) / dt;
  for (std::size_t k = 1; k + 1 < kWindowLength; ++k) out[k] = (v[k + 1] - v[k - 1]) / (2.0 * dt);
  out[kWindowLength - 1] = (v[kWindowLength - 1] - v[kWindowLength - 2]) / dt;
  return out;
}

inline constexpr double kNormalizeEpsilon = 1e-12;

/// Min-max scaling to [0,1]; a span narrower than kNormalizeEpsilon maps to 0.5 everywhere.
template <typename In, typename Out>
void normalize_into(std::span<const In> values, std::span<Out> out) {
  if (values.size() != out.size()) throw ConfigError("normalize: size mismatch");
  if (values.empty()) return;
  double lo = static_cast<double>(values[0]);
  double hi = lo;
  for (const In x : values) {
    const double v = static_cast<double>(x);
    if (!std::isfinite(v)) throw DataError("normalize: non-finite input");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double span = hi - lo;
  if (span < kNormalizeEpsilon) {
    std::fill(out.begin(), out.end(), static_cast<Out>(0.5));
    return;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double scaled = (static_cast<double>(values[i]) - lo) / span;
    out[i] = static_cast<Out>(std::clamp(scaled, 0.0, 1.0));
  }
}

inline Series normalize(const Series& values) {
  Series out{};
  normalize_into(std::span<const double>(values), std::span<double>(out));
  return out;
}

inline RawChannels pid_channels(const Window& w) {
  RawChannels ch;
  const Series integral = integrate(w);
  const Series derivative = differentiate(w);
  auto raw = ch.channel(Channel::raw);
  auto integ = ch.channel(Channel::integral);
  auto deriv = ch.channel(Channel::derivative);
  for (std::size_t k = 0; k < kWindowLength; ++k) {
    raw[k] = static_cast<float>(w.values[k]);
    integ[k] = static_cast<float>(integral[k]);
    deriv[k] = static_cast<float>(derivative[k]);
  }
  return ch;
}

/// Normalizes each channel and rasterizes it row-major: pixel (r,c) is sample 32r+c.
inline FeatureImage image_from_channels(const RawChannels& ch) {
  FeatureImage img;
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    normalize_into(std::span<const float>(ch.channel(static_cast<Channel>(c))),
                   std::span<float>(img.pixels.data() + c * kPlaneSize, kPlaneSize));
  }
  return img;
}

/// Full transform. Both the on-device detector and the external-processor
/// server go through pid_channels -> image_from_channels, so they agree bit for bit.
inline FeatureImage pid_transform(const Window& w, std::size_t window_start = 0, std::uint64_t trace_id = 0) {
  FeatureImage img = image_from_channels(pid_channels(w));
  img.window_start = window_start;
  img.trace_id = trace_id;
  return img;
}

/// Writes three binary PGM (P5, maxval 255) planes back to back: raw, integral, derivative.
inline void write_pgm(std::ostream& out, const FeatureImage& img) {
  for (std::size_t c = 0; c < kImageChannels; ++c) {
    out << "P5\n" << kImageSide << ' ' << kImageSide << "\n255\n";
    for (std::size_t i = 0; i < kPlaneSize; ++i) {
      const float v = img.pixels[c * kPlaneSize + i];
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
    }
  }
}

/// One row per pixel: `channel,row,col,value`.
inline void write_image_csv(std::ostream& out, const FeatureImage& img) {
  out << "channel,row,col,value\n";
  for (std::size_t c = 0; c < kImageChannels; ++c)
    for (std::size_t r = 0; r < kImageSide; ++r)
      for (std::size_t col = 0; col < kImageSide; ++col)
        out << c << ',' << r << ',' << col << ',' << img.at(c, r, col) << '\n';
}

}  // namespace servoguard
