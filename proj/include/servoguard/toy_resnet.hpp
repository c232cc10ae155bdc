#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "servoguard/network.hpp"

namespace servoguard::nn {

/// Channel widths of the compact residual classifier. The defaults are the
/// deployed 7,914-parameter network; smaller settings give the same topology
/// for gradient checks.
struct ResNetConfig {
  Shape input{3, 32, 32};
  std::size_t stem1 = 8;
  std::size_t stem2 = 16;
  std::size_t block_mid = 8;
  std::size_t blocks = 2;
  std::size_t head_conv = 8;
  std::size_t hidden = 64;
  std::size_t classes = 2;
};

inline constexpr std::size_t kToyResNetParameters = 7914;

/// img -> conv(valid) -> conv(valid) -> maxpool 3/3 -> residual blocks
/// [conv(same) -> conv(same) -> add skip] -> conv(valid) -> global average
/// pool -> dense -> dense -> softmax. ReLU follows every conv and the hidden dense.
template <typename T = double>
Network<T> build_resnet(const ResNetConfig& cfg, std::uint64_t seed = 1) {
  Network<T> net;
  std::size_t x = net.input(cfg.input, "img");
  std::size_t conv_id = 7;
  auto conv = [&](std::size_t from, std::size_t out, Padding pad) {
    const std::size_t c = net.conv2d(from, out, pad, 3, "conv2d_" + std::to_string(conv_id++));
    return net.relu(c);
  };
  x = conv(x, cfg.stem1, Padding::valid);
  x = conv(x, cfg.stem2, Padding::valid);
  std::size_t skip = net.maxpool(x, 3, 3, "max_pooling2d_1");
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    std::size_t y = conv(skip, cfg.block_mid, Padding::same);
    y = conv(y, cfg.stem2, Padding::same);
    skip = net.add(y, skip, "add_" + std::to_string(b + 2));
  }
  x = conv(skip, cfg.head_conv, Padding::valid);
  x = net.global_avg_pool(x, "global_average_pooling2d_1");
  x = net.relu(net.dense(x, cfg.hidden, "dense_2"));
  x = net.dense(x, cfg.classes, "dense_3");
  net.softmax(x, "softmax");
  net.initialize(seed);
  return net;
}

template <typename T = double>
Network<T> build_toy_resnet(std::uint64_t seed = 1) {
  Network<T> net = build_resnet<T>(ResNetConfig{}, seed);
  if (net.parameter_count() != kToyResNetParameters)
    throw std::logic_error("toy_resnet parameter count " + std::to_string(net.parameter_count()) + " != 7914");
  return net;
}

/// Same layer kinds and wiring at a size where finite differences are cheap.
inline ResNetConfig reduced_resnet_config() {
  ResNetConfig cfg;
  cfg.input = Shape{3, 16, 16};
  cfg.stem1 = 2;
  cfg.stem2 = 3;
  cfg.block_mid = 2;
  cfg.head_conv = 2;
  cfg.hidden = 4;
  return cfg;
}

}  // namespace servoguard::nn
