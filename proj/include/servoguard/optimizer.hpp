#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "servoguard/errors.hpp"
#include "servoguard/network.hpp"

namespace servoguard::nn {

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step = 0;
  std::vector<Params<T>> m;
  std::vector<Params<T>> v;

  explicit AdamState(const Network<T>& net) {
    m.resize(net.size());
    for (std::size_t i = 0; i < net.size(); ++i) {
      m[i].weights.assign(net.params(i).weights.size(), T{0});
      m[i].bias.assign(net.params(i).bias.size(), T{0});
    }
    v = m;
  }
};

namespace detail {

template <typename T>
void adam_update(std::vector<T>& param, const std::vector<T>& grad, std::vector<T>& m, std::vector<T>& v,
                 const AdamState<T>& s, double lr, double bc1, double bc2) {
  for (std::size_t j = 0; j < param.size(); ++j) {
    const double g = grad[j];
    const double mj = s.beta1 * m[j] + (1 - s.beta1) * g;
    const double vj = s.beta2 * v[j] + (1 - s.beta2) * g * g;
    m[j] = static_cast<T>(mj);
    v[j] = static_cast<T>(vj);
    param[j] = static_cast<T>(param[j] - lr * (mj / bc1) / (std::sqrt(vj / bc2) + s.epsilon));
  }
}

}  // namespace detail

/// One bias-corrected Adam update in place.
template <typename T>
void adam_step(Network<T>& net, const Gradients<T>& grads, AdamState<T>& state, double lr) {
  if (grads.params.size() != net.size() || state.m.size() != net.size())
    throw StructuralError("adam_step: gradient/optimizer state does not match the network");
  ++state.step;
  const double bc1 = 1 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto& p = net.params(i);
    if (p.weights.size() != grads.params[i].weights.size() || p.bias.size() != grads.params[i].bias.size())
      throw StructuralError("adam_step: gradient shape mismatch at layer " + std::to_string(i));
    detail::adam_update(p.weights, grads.params[i].weights, state.m[i].weights, state.v[i].weights, state, lr, bc1,
                        bc2);
    detail::adam_update(p.bias, grads.params[i].bias, state.m[i].bias, state.v[i].bias, state, lr, bc1, bc2);
  }
}

}  // namespace servoguard::nn
