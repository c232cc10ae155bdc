#pragma once

/// Portable weight blob.
///
///   "TRNW" | version u16 | layer count u16 |
///   per parameterized layer: kind u8, dims u16 x4, weights then biases as f32 |
///   CRC-32 over everything before it, u32
///
/// All integers and floats are little-endian. Conv dims are
/// (out, in, kernel, kernel); dense dims are (out, in, 1, 1).

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

#include "servoguard/binary_io.hpp"
#include "servoguard/errors.hpp"
#include "servoguard/network.hpp"
#include "servoguard/toy_resnet.hpp"

namespace servoguard::nn {

inline constexpr std::array<std::uint8_t, 4> kWeightMagic{'T', 'R', 'N', 'W'};
inline constexpr std::uint16_t kWeightVersion = 1;
inline constexpr std::size_t kWeightHeaderBytes = 8;
inline constexpr std::size_t kWeightRecordHeaderBytes = 9;
inline constexpr std::size_t kWeightTrailerBytes = 4;

inline std::array<std::uint16_t, 4> layer_dims(const LayerSpec& s) {
  if (s.kind == LayerKind::conv2d)
    return {static_cast<std::uint16_t>(s.out_channels), static_cast<std::uint16_t>(s.in_channels),
            static_cast<std::uint16_t>(s.kernel), static_cast<std::uint16_t>(s.kernel)};
  return {static_cast<std::uint16_t>(s.out_features), static_cast<std::uint16_t>(s.in_features), 1, 1};
}

/// Expected file size for a network.
template <typename T>
std::size_t weight_file_size(const Network<T>& net) {
  return kWeightHeaderBytes + net.parameter_layers().size() * kWeightRecordHeaderBytes + net.parameter_count() * 4 +
         kWeightTrailerBytes;
}

template <typename T>
Bytes save_weights(const Network<T>& net) {
  const auto layers = net.parameter_layers();
  Bytes out;
  out.reserve(weight_file_size(net));
  ByteWriter w(out);
  w.raw(kWeightMagic);
  w.u16(kWeightVersion);
  w.u16(static_cast<std::uint16_t>(layers.size()));
  for (std::size_t i : layers) {
    const auto& spec = net.node(i).spec;
    w.u8(static_cast<std::uint8_t>(spec.kind));
    for (std::uint16_t d : layer_dims(spec)) w.u16(d);
    for (T v : net.params(i).weights) w.f32(static_cast<float>(v));
    for (T v : net.params(i).bias) w.f32(static_cast<float>(v));
  }
  w.u32(crc32_ieee(out));
  return out;
}

/// Overwrites the parameters of `net` from a blob. `net` supplies the topology;
/// every record must match it and the total count must equal net.parameter_count().
template <typename T>
void load_weights_into(Network<T>& net, std::span<const std::uint8_t> blob) {
  using Code = LoadError::Code;
  if (blob.size() < kWeightHeaderBytes + kWeightTrailerBytes) throw LoadError(Code::truncated, "weights: file too short");
  if (!std::equal(kWeightMagic.begin(), kWeightMagic.end(), blob.begin()))
    throw LoadError(Code::bad_magic, "weights: bad magic");
  ByteReader r(blob);
  r.u32();
  const std::uint16_t version = r.u16();
  if (version != kWeightVersion)
    throw LoadError(Code::bad_version, "weights: unsupported version " + std::to_string(version));
  const std::uint16_t count = r.u16();

  // Walk the records first so truncation is reported as such rather than as a checksum failure.
  std::size_t expected = kWeightHeaderBytes;
  {
    ByteReader walk(blob);
    for (int i = 0; i < 8; ++i) walk.u8();
    for (std::uint16_t l = 0; l < count; ++l) {
      walk.u8();
      std::array<std::size_t, 4> d{};
      for (auto& v : d) v = walk.u16();
      const std::size_t n = d[0] * d[1] * d[2] * d[3] + d[0];
      if (!walk.ok()) throw LoadError(Code::truncated, "weights: truncated layer header");
      expected += kWeightRecordHeaderBytes + 4 * n;
      if (blob.size() < expected + kWeightTrailerBytes) throw LoadError(Code::truncated, "weights: truncated payload");
      for (std::size_t j = 0; j < 4 * n; ++j) walk.u8();
    }
  }
  if (blob.size() != expected + kWeightTrailerBytes)
    throw LoadError(Code::truncated, "weights: length " + std::to_string(blob.size()) + " != expected " +
                                         std::to_string(expected + kWeightTrailerBytes));
  {
    ByteReader tail(blob.subspan(expected));
    if (tail.u32() != crc32_ieee(blob.first(expected))) throw LoadError(Code::checksum, "weights: CRC mismatch");
  }

  const auto layers = net.parameter_layers();
  if (count != layers.size())
    throw LoadError(Code::shape_mismatch, "weights: file has " + std::to_string(count) + " layers, network has " +
                                              std::to_string(layers.size()));
  std::vector<Params<T>> staged(layers.size());
  std::size_t total = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& spec = net.node(layers[l]).spec;
    const auto kind = static_cast<LayerKind>(r.u8());
    std::array<std::uint16_t, 4> dims{};
    for (auto& d : dims) d = r.u16();
    if (kind != spec.kind || dims != layer_dims(spec))
      throw LoadError(Code::shape_mismatch, "weights: layer " + std::to_string(l) + " does not match the network");
    staged[l].weights.resize(spec.weight_count());
    staged[l].bias.resize(spec.bias_count());
    for (auto& v : staged[l].weights) v = static_cast<T>(r.f32());
    for (auto& v : staged[l].bias) v = static_cast<T>(r.f32());
    total += spec.parameter_count();
  }
  if (total != net.parameter_count()) throw LoadError(Code::shape_mismatch, "weights: parameter total mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) net.params(layers[l]) = std::move(staged[l]);
}

/// Loads a toy_resnet blob.
template <typename T = double>
Network<T> load_weights(std::span<const std::uint8_t> blob) {
  Network<T> net = build_toy_resnet<T>();
  load_weights_into(net, blob);
  return net;
}

template <typename T>
void save_weights_file(const std::filesystem::path& path, const Network<T>& net) {
  write_file_atomic(path, save_weights(net));
}

template <typename T = double>
Network<T> load_weights_file(const std::filesystem::path& path) {
  const Bytes blob = read_file(path);
  return load_weights<T>(blob);
}

}  // namespace servoguard::nn
