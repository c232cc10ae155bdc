#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "servoguard.hpp"

namespace sgtest {

inline std::vector<double> random_values(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline servoguard::Window random_window(std::mt19937_64& rng, double dt = 1e-3, double lo = 0.0, double hi = 5.0) {
  const auto v = random_values(rng, servoguard::kWindowLength, lo, hi);
  return servoguard::Window(v, dt);
}

/// |a - b| <= rel * max(|a|, |b|), with `abs_floor` for values near zero.
inline bool close(double a, double b, double rel, double abs_floor = 0.0) {
  const double d = std::abs(a - b);
  return d <= abs_floor || d <= rel * std::max(std::abs(a), std::abs(b));
}

inline std::vector<double> to_input(const servoguard::FeatureImage& img) {
  return {img.pixels.begin(), img.pixels.end()};
}

#ifdef SG_FIXTURE_DIR
inline std::string fixture(const std::string& name) { return std::string(SG_FIXTURE_DIR) + "/" + name; }
#endif

}  // namespace sgtest
