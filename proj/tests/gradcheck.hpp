#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "servoguard.hpp"

namespace sgtest {

using servoguard::nn::Network;
using servoguard::nn::Gradients;

inline void randomize(Network<double>& net, std::uint64_t seed, double scale = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-scale, scale);
  for (auto& p : net.all_params()) {
    for (auto& w : p.weights) w = d(rng);
    for (auto& b : p.bias) b = d(rng);
  }
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_rel = 0;
};

/// Central finite differences (h = 1e-5) on every parameter and every input
/// value of `net`. A component passes at 1e-5 relative, or at 1e-8 absolute
/// when the gradient magnitude is below 1e-3.
inline GradCheck check_gradients(Network<double> net, const std::vector<double>& input, std::size_t label) {
  const double h = 1e-5;
  Gradients<double> g(net);
  servoguard::nn::backward<double>(net, input, label, g);

  auto loss_at = [&](const Network<double>& n, const std::vector<double>& x) {
    const auto out = servoguard::nn::forward<double>(n, x);
    return servoguard::nn::cross_entropy<double>(out.logits, label);
  };
  GradCheck r;
  auto compare = [&](double analytic, double numeric) {
    ++r.checked;
    const double diff = std::abs(analytic - numeric);
    const double mag = std::max(std::abs(analytic), std::abs(numeric));
    const bool ok = mag < 1e-3 ? diff <= 1e-8 || diff <= 1e-5 * mag : diff <= 1e-5 * mag;
    if (mag > 0) r.worst_rel = std::max(r.worst_rel, diff / mag);
    if (!ok) ++r.failures;
  };

  for (std::size_t i = 0; i < net.size(); ++i) {
    for (int which = 0; which < 2; ++which) {
      auto& vec = which == 0 ? net.params(i).weights : net.params(i).bias;
      const auto& gvec = which == 0 ? g.params[i].weights : g.params[i].bias;
      for (std::size_t j = 0; j < vec.size(); ++j) {
        const double keep = vec[j];
        vec[j] = keep + h;
        const double up = loss_at(net, input);
        vec[j] = keep - h;
        const double down = loss_at(net, input);
        vec[j] = keep;
        compare(gvec[j], (up - down) / (2 * h));
      }
    }
  }
  std::vector<double> x = input;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double keep = x[j];
    x[j] = keep + h;
    const double up = loss_at(net, x);
    x[j] = keep - h;
    const double down = loss_at(net, x);
    x[j] = keep;
    compare(g.input[j], (up - down) / (2 * h));
  }
  return r;
}

}  // namespace sgtest
