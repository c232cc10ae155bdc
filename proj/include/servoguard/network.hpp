#pragma once

/// Small dependency-free CNN engine: a DAG of layers over dense row-major
/// tensors, forward pass, and reverse-mode gradients for softmax cross-entropy.
///
/// `Network<double>` is the training precision; `network_cast<float>` produces
/// the 32-bit inference copy.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "servoguard/errors.hpp"

namespace servoguard::nn {

struct Shape {
  std::size_t c = 1, h = 1, w = 1;
  std::size_t size() const noexcept { return c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const { return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w); }
};

enum class LayerKind : std::uint8_t {
  input = 0,
  conv2d = 1,
  maxpool = 2,
  add = 3,
  global_avg_pool = 4,
  dense = 5,
  relu = 6,
  softmax = 7,
};

enum class Padding : std::uint8_t { valid = 0, same = 1 };

struct LayerSpec {
  LayerKind kind = LayerKind::input;
  // conv2d
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  Padding padding = Padding::valid;
  // maxpool
  std::size_t pool = 3;
  std::size_t stride = 3;
  // dense
  std::size_t in_features = 0;
  std::size_t out_features = 0;

  bool has_parameters() const noexcept { return kind == LayerKind::conv2d || kind == LayerKind::dense; }

  std::size_t weight_count() const noexcept {
    if (kind == LayerKind::conv2d) return out_channels * in_channels * kernel * kernel;
    if (kind == LayerKind::dense) return out_features * in_features;
    return 0;
  }
  std::size_t bias_count() const noexcept {
    if (kind == LayerKind::conv2d) return out_channels;
    if (kind == LayerKind::dense) return out_features;
    return 0;
  }
  std::size_t parameter_count() const noexcept { return weight_count() + bias_count(); }
};

struct Node {
  LayerSpec spec;
  std::vector<std::size_t> inputs;
  Shape shape;  ///< output shape
  std::string name;
};

/// Weights omega and biases b of one layer. Conv weights are [out][in][ky][kx]; dense weights are [out][in].
template <typename T>
struct Params {
  std::vector<T> weights;
  std::vector<T> bias;
  bool operator==(const Params&) const = default;
};

template <typename T>
class Network {
public:
  using value_type = T;

  std::size_t input(Shape shape, std::string name = "img") {
    if (!nodes_.empty()) throw StructuralError("network: the input must be the first node");
    LayerSpec spec;
    spec.kind = LayerKind::input;
    return push({spec, {}, shape, std::move(name)});
  }

  std::size_t conv2d(std::size_t from, std::size_t out_channels, Padding padding, std::size_t kernel = 3,
                     std::string name = {}) {
    const Shape in = shape_of(from);
    LayerSpec spec;
    spec.kind = LayerKind::conv2d;
    spec.in_channels = in.c;
    spec.out_channels = out_channels;
    spec.kernel = kernel;
    spec.padding = padding;
    if (kernel == 0) throw StructuralError("conv2d: kernel must be >= 1");
    const std::size_t pad = padding == Padding::same ? kernel / 2 : 0;
    if (in.h + 2 * pad < kernel || in.w + 2 * pad < kernel)
      throw StructuralError("conv2d: input " + in.str() + " smaller than kernel");
    if (padding == Padding::same && kernel % 2 == 0) throw StructuralError("conv2d: same padding needs an odd kernel");
    Shape out{out_channels, in.h + 2 * pad - kernel + 1, in.w + 2 * pad - kernel + 1};
    return push({spec, {from}, out, std::move(name)});
  }

  std::size_t maxpool(std::size_t from, std::size_t size = 3, std::size_t stride = 3, std::string name = {}) {
    const Shape in = shape_of(from);
    if (size == 0 || stride == 0 || in.h < size || in.w < size)
      throw StructuralError("maxpool: window does not fit input " + in.str());
    LayerSpec spec;
    spec.kind = LayerKind::maxpool;
    spec.pool = size;
    spec.stride = stride;
    Shape out{in.c, (in.h - size) / stride + 1, (in.w - size) / stride + 1};
    return push({spec, {from}, out, std::move(name)});
  }

  std::size_t add(std::size_t left, std::size_t right, std::string name = {}) {
    if (!(shape_of(left) == shape_of(right)))
      throw StructuralError("add: operand shapes differ (" + shape_of(left).str() + " vs " + shape_of(right).str() + ")");
    LayerSpec spec;
    spec.kind = LayerKind::add;
    return push({spec, {left, right}, shape_of(left), std::move(name)});
  }

  std::size_t global_avg_pool(std::size_t from, std::string name = {}) {
    LayerSpec spec;
    spec.kind = LayerKind::global_avg_pool;
    return push({spec, {from}, Shape{shape_of(from).c, 1, 1}, std::move(name)});
  }

  std::size_t dense(std::size_t from, std::size_t out_features, std::string name = {}) {
    LayerSpec spec;
    spec.kind = LayerKind::dense;
    spec.in_features = shape_of(from).size();
    spec.out_features = out_features;
    return push({spec, {from}, Shape{out_features, 1, 1}, std::move(name)});
  }

  std::size_t relu(std::size_t from, std::string name = {}) {
    LayerSpec spec;
    spec.kind = LayerKind::relu;
    return push({spec, {from}, shape_of(from), std::move(name)});
  }

  std::size_t softmax(std::size_t from, std::string name = {}) {
    LayerSpec spec;
    spec.kind = LayerKind::softmax;
    return push({spec, {from}, Shape{shape_of(from).size(), 1, 1}, std::move(name)});
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  std::size_t size() const noexcept { return nodes_.size(); }
  Shape input_shape() const { return nodes_.at(0).shape; }
  Shape output_shape() const { return nodes_.back().shape; }

  Params<T>& params(std::size_t i) { return params_.at(i); }
  const Params<T>& params(std::size_t i) const { return params_.at(i); }
  std::vector<Params<T>>& all_params() noexcept { return params_; }
  const std::vector<Params<T>>& all_params() const noexcept { return params_; }

  /// Indices of conv2d/dense nodes in graph order.
  std::vector<std::size_t> parameter_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (nodes_[i].spec.has_parameters()) out.push_back(i);
    return out;
  }

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& node : nodes_) n += node.spec.parameter_count();
    return n;
  }

  /// He-uniform on fan-in, zero biases. Values are rounded to float so a
  /// freshly initialized network survives the 32-bit weight file unchanged.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& spec = nodes_[i].spec;
      if (!spec.has_parameters()) continue;
      const std::size_t fan_in =
          spec.kind == LayerKind::conv2d ? spec.in_channels * spec.kernel * spec.kernel : spec.in_features;
      const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& w : params_[i].weights) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        w = static_cast<T>(static_cast<float>(limit * (2.0 * u - 1.0)));
      }
      std::fill(params_[i].bias.begin(), params_[i].bias.end(), T{0});
    }
  }

  bool same_topology(const Network& o) const {
    if (nodes_.size() != o.nodes_.size()) return false;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const auto& a = nodes_[i];
      const auto& b = o.nodes_[i];
      if (a.spec.kind != b.spec.kind || a.inputs != b.inputs || !(a.shape == b.shape) ||
          a.spec.parameter_count() != b.spec.parameter_count())
        return false;
    }
    return true;
  }

  bool operator==(const Network& o) const { return same_topology(o) && params_ == o.params_; }

  /// Throws StructuralError when a parameter block no longer matches its layer.
  void check_parameters() const {
    if (nodes_.empty()) throw StructuralError("network: empty graph");
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (params_[i].weights.size() != nodes_[i].spec.weight_count() ||
          params_[i].bias.size() != nodes_[i].spec.bias_count())
        throw StructuralError("network: parameter shape mismatch at layer " + std::to_string(i));
    }
  }

private:
  Shape shape_of(std::size_t i) const {
    if (i >= nodes_.size()) throw StructuralError("network: unknown predecessor " + std::to_string(i));
    return nodes_[i].shape;
  }

  std::size_t push(Node node) {
    if (node.spec.kind != LayerKind::input && nodes_.empty()) throw StructuralError("network: add an input first");
    if (node.name.empty()) node.name = "layer_" + std::to_string(nodes_.size());
    Params<T> p;
    p.weights.assign(node.spec.weight_count(), T{0});
    p.bias.assign(node.spec.bias_count(), T{0});
    nodes_.push_back(std::move(node));
    params_.push_back(std::move(p));
    return nodes_.size() - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Params<T>> params_;
};

template <typename U, typename T>
Network<U> network_cast(const Network<T>& net) {
  Network<U> out;
  for (const auto& node : net.nodes()) {
    const auto& s = node.spec;
    const std::size_t src = node.inputs.empty() ? 0 : node.inputs[0];
    switch (s.kind) {
    case LayerKind::input: out.input(node.shape, node.name); break;
    case LayerKind::conv2d: out.conv2d(src, s.out_channels, s.padding, s.kernel, node.name); break;
    case LayerKind::maxpool: out.maxpool(src, s.pool, s.stride, node.name); break;
    case LayerKind::add: out.add(node.inputs[0], node.inputs[1], node.name); break;
    case LayerKind::global_avg_pool: out.global_avg_pool(src, node.name); break;
    case LayerKind::dense: out.dense(src, s.out_features, node.name); break;
    case LayerKind::relu: out.relu(src, node.name); break;
    case LayerKind::softmax: out.softmax(src, node.name); break;
    }
  }
  for (std::size_t i = 0; i < net.size(); ++i) {
    const auto& a = net.params(i);
    auto& b = out.params(i);
    b.weights.assign(a.weights.begin(), a.weights.end());
    b.bias.assign(a.bias.begin(), a.bias.end());
  }
  return out;
}

/// Per-parameter gradients mirroring Network::all_params(), plus the gradient
/// with respect to the network input.
template <typename T>
struct Gradients {
  std::vector<Params<T>> params;
  std::vector<T> input;

  explicit Gradients(const Network<T>& net) {
    params.resize(net.size());
    for (std::size_t i = 0; i < net.size(); ++i) {
      params[i].weights.assign(net.node(i).spec.weight_count(), T{0});
      params[i].bias.assign(net.node(i).spec.bias_count(), T{0});
    }
    input.assign(net.input_shape().size(), T{0});
  }

  void zero() {
    for (auto& p : params) {
      std::fill(p.weights.begin(), p.weights.end(), T{0});
      std::fill(p.bias.begin(), p.bias.end(), T{0});
    }
    std::fill(input.begin(), input.end(), T{0});
  }

  void scale(T factor) {
    for (auto& p : params) {
      for (auto& g : p.weights) g *= factor;
      for (auto& g : p.bias) g *= factor;
    }
    for (auto& g : input) g *= factor;
  }

  bool all_finite() const {
    for (const auto& p : params) {
      for (T g : p.weights)
        if (!std::isfinite(g)) return false;
      for (T g : p.bias)
        if (!std::isfinite(g)) return false;
    }
    return true;
  }
};

/// Reusable activation and gradient buffers; one per thread.
template <typename T>
struct Workspace {
  std::vector<std::vector<T>> act;
  std::vector<std::vector<T>> grad;
  std::vector<std::vector<std::uint32_t>> argmax;

  void prepare(const Network<T>& net) {
    if (act.size() == net.size()) {
      bool same = true;
      for (std::size_t i = 0; i < net.size() && same; ++i) {
        const std::size_t n = net.node(i).shape.size();
        same = act[i].size() == n && argmax[i].size() == (net.node(i).spec.kind == LayerKind::maxpool ? n : 0);
      }
      if (same) return;
    }
    act.assign(net.size(), {});
    grad.assign(net.size(), {});
    argmax.assign(net.size(), {});
    for (std::size_t i = 0; i < net.size(); ++i) {
      act[i].assign(net.node(i).shape.size(), T{0});
      grad[i].assign(net.node(i).shape.size(), T{0});
      if (net.node(i).spec.kind == LayerKind::maxpool) argmax[i].assign(net.node(i).shape.size(), 0);
    }
  }
};

namespace detail {

template <typename T>
void conv_forward(const LayerSpec& s, const Shape& in_shape, const Shape& out_shape, const Params<T>& p,
                  std::span<const T> in, std::span<T> out) {
  const std::size_t k = s.kernel;
  const std::ptrdiff_t pad = s.padding == Padding::same ? static_cast<std::ptrdiff_t>(k / 2) : 0;
  const auto H = static_cast<std::ptrdiff_t>(in_shape.h), W = static_cast<std::ptrdiff_t>(in_shape.w);
  const auto Ho = static_cast<std::ptrdiff_t>(out_shape.h), Wo = static_cast<std::ptrdiff_t>(out_shape.w);
  for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
    T* o = out.data() + oc * out_shape.h * out_shape.w;
    std::fill(o, o + Ho * Wo, p.bias[oc]);
    for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
      const T* x = in.data() + ic * in_shape.h * in_shape.w;
      const T* wk = p.weights.data() + (oc * s.in_channels + ic) * k * k;
      for (std::ptrdiff_t ky = 0; ky < static_cast<std::ptrdiff_t>(k); ++ky) {
        const std::ptrdiff_t dy = ky - pad;
        const std::ptrdiff_t oy0 = std::max<std::ptrdiff_t>(0, -dy), oy1 = std::min(Ho, H - dy);
        for (std::ptrdiff_t kx = 0; kx < static_cast<std::ptrdiff_t>(k); ++kx) {
          const std::ptrdiff_t dx = kx - pad;
          const std::ptrdiff_t ox0 = std::max<std::ptrdiff_t>(0, -dx), ox1 = std::min(Wo, W - dx);
          const T wv = wk[ky * static_cast<std::ptrdiff_t>(k) + kx];
          for (std::ptrdiff_t oy = oy0; oy < oy1; ++oy) {
            T* orow = o + oy * Wo;
            const T* xrow = x + (oy + dy) * W + dx;
            for (std::ptrdiff_t ox = ox0; ox < ox1; ++ox) orow[ox] += wv * xrow[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void conv_backward(const LayerSpec& s, const Shape& in_shape, const Shape& out_shape, const Params<T>& p,
                   std::span<const T> in, std::span<const T> gout, std::span<T> gin, Params<T>& gp) {
  const std::size_t k = s.kernel;
  const std::ptrdiff_t pad = s.padding == Padding::same ? static_cast<std::ptrdiff_t>(k / 2) : 0;
  const auto H = static_cast<std::ptrdiff_t>(in_shape.h), W = static_cast<std::ptrdiff_t>(in_shape.w);
  const auto Ho = static_cast<std::ptrdiff_t>(out_shape.h), Wo = static_cast<std::ptrdiff_t>(out_shape.w);
  for (std::size_t oc = 0; oc < s.out_channels; ++oc) {
    const T* g = gout.data() + oc * out_shape.h * out_shape.w;
    T bsum = 0;
    for (std::ptrdiff_t i = 0; i < Ho * Wo; ++i) bsum += g[i];
    gp.bias[oc] += bsum;
    for (std::size_t ic = 0; ic < s.in_channels; ++ic) {
      const T* x = in.data() + ic * in_shape.h * in_shape.w;
      T* gx = gin.data() + ic * in_shape.h * in_shape.w;
      const std::size_t base = (oc * s.in_channels + ic) * k * k;
      for (std::ptrdiff_t ky = 0; ky < static_cast<std::ptrdiff_t>(k); ++ky) {
        const std::ptrdiff_t dy = ky - pad;
        const std::ptrdiff_t oy0 = std::max<std::ptrdiff_t>(0, -dy), oy1 = std::min(Ho, H - dy);
        for (std::ptrdiff_t kx = 0; kx < static_cast<std::ptrdiff_t>(k); ++kx) {
          const std::ptrdiff_t dx = kx - pad;
          const std::ptrdiff_t ox0 = std::max<std::ptrdiff_t>(0, -dx), ox1 = std::min(Wo, W - dx);
          const std::size_t widx = base + static_cast<std::size_t>(ky) * k + static_cast<std::size_t>(kx);
          const T wv = p.weights[widx];
          T wsum = 0;
          for (std::ptrdiff_t oy = oy0; oy < oy1; ++oy) {
            const T* grow = g + oy * Wo;
            const T* xrow = x + (oy + dy) * W + dx;
            T* gxrow = gx + (oy + dy) * W + dx;
            for (std::ptrdiff_t ox = ox0; ox < ox1; ++ox) {
              wsum += grow[ox] * xrow[ox];
              gxrow[ox] += wv * grow[ox];
            }
          }
          gp.weights[widx] += wsum;
        }
      }
    }
  }
}

template <typename T>
void maxpool_forward(const LayerSpec& s, const Shape& in_shape, const Shape& out_shape, std::span<const T> in,
                     std::span<T> out, std::span<std::uint32_t> argmax) {
  for (std::size_t c = 0; c < out_shape.c; ++c)
    for (std::size_t oy = 0; oy < out_shape.h; ++oy)
      for (std::size_t ox = 0; ox < out_shape.w; ++ox) {
        std::size_t best = (c * in_shape.h + oy * s.stride) * in_shape.w + ox * s.stride;
        for (std::size_t py = 0; py < s.pool; ++py)
          for (std::size_t px = 0; px < s.pool; ++px) {
            const std::size_t idx = (c * in_shape.h + oy * s.stride + py) * in_shape.w + ox * s.stride + px;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (c * out_shape.h + oy) * out_shape.w + ox;
        out[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
}

}  // namespace detail

template <typename T>
struct ForwardResult {
  std::vector<T> logits;
  std::vector<T> probabilities;
};

/// Runs the graph, leaving every activation in `ws.act`. Returns the final activation.
template <typename T>
std::span<const T> run(const Network<T>& net, std::span<const T> input, Workspace<T>& ws) {
  net.check_parameters();
  if (input.size() != net.input_shape().size())
    throw StructuralError("forward: input has " + std::to_string(input.size()) + " values, network expects " +
                          net.input_shape().str());
  ws.prepare(net);
  const auto& nodes = net.nodes();
  std::copy(input.begin(), input.end(), ws.act[0].begin());
  for (std::size_t i = 1; i < nodes.size(); ++i) {
    const Node& n = nodes[i];
    auto& out = ws.act[i];
    const auto& in = ws.act[n.inputs[0]];
    const Shape& in_shape = nodes[n.inputs[0]].shape;
    switch (n.spec.kind) {
    case LayerKind::input: throw StructuralError("forward: second input node");
    case LayerKind::conv2d:
      detail::conv_forward<T>(n.spec, in_shape, n.shape, net.params(i), in, out);
      break;
    case LayerKind::maxpool: detail::maxpool_forward<T>(n.spec, in_shape, n.shape, in, out, ws.argmax[i]); break;
    case LayerKind::add: {
      const auto& rhs = ws.act[n.inputs[1]];
      for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j] + rhs[j];
      break;
    }
    case LayerKind::global_avg_pool: {
      const std::size_t plane = in_shape.h * in_shape.w;
      for (std::size_t c = 0; c < in_shape.c; ++c) {
        T sum = 0;
        for (std::size_t j = 0; j < plane; ++j) sum += in[c * plane + j];
        out[c] = sum / static_cast<T>(plane);
      }
      break;
    }
    case LayerKind::dense: {
      const auto& p = net.params(i);
      const std::size_t nin = n.spec.in_features;
      for (std::size_t o = 0; o < n.spec.out_features; ++o) {
        T sum = p.bias[o];
        const T* w = p.weights.data() + o * nin;
        for (std::size_t j = 0; j < nin; ++j) sum += w[j] * in[j];
        out[o] = sum;
      }
      break;
    }
    case LayerKind::relu:
      for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j] > T{0} ? in[j] : T{0};
      break;
    case LayerKind::softmax: {
      const T mx = *std::max_element(in.begin(), in.end());
      T sum = 0;
      for (std::size_t j = 0; j < out.size(); ++j) sum += (out[j] = std::exp(in[j] - mx));
      for (auto& v : out) v /= sum;
      break;
    }
    }
  }
  return ws.act.back();
}

template <typename T>
void require_softmax_head(const Network<T>& net) {
  if (net.size() < 2 || net.nodes().back().spec.kind != LayerKind::softmax)
    throw StructuralError("network must end in a softmax layer");
}

template <typename T>
ForwardResult<T> forward(const Network<T>& net, std::span<const T> input, Workspace<T>& ws) {
  require_softmax_head(net);
  run(net, input, ws);
  ForwardResult<T> r;
  r.logits = ws.act[net.nodes().back().inputs[0]];
  r.probabilities = ws.act.back();
  return r;
}

template <typename T>
ForwardResult<T> forward(const Network<T>& net, std::span<const T> input) {
  Workspace<T> ws;
  return forward(net, input, ws);
}

/// Cross-entropy -log p[label] computed from logits via log-sum-exp.
template <typename T>
T cross_entropy(std::span<const T> logits, std::size_t label) {
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (T z : logits) sum += std::exp(z - mx);
  return mx + std::log(sum) - logits[label];
}

/// Forward + reverse pass for one example. Parameter gradients are ADDED to
/// `grads` (so a mini-batch accumulates); the input gradient is overwritten.
/// Returns the loss.
template <typename T>
T backward(const Network<T>& net, std::span<const T> input, std::size_t label, Workspace<T>& ws, Gradients<T>& grads) {
  require_softmax_head(net);
  run(net, input, ws);
  const auto& nodes = net.nodes();
  const std::size_t last = nodes.size() - 1;
  const std::size_t logits_id = nodes[last].inputs[0];
  if (label >= ws.act[last].size()) throw StructuralError("backward: label out of range");

  for (auto& g : ws.grad) std::fill(g.begin(), g.end(), T{0});
  const T loss = cross_entropy<T>(ws.act[logits_id], label);
  {
    auto& g = ws.grad[logits_id];
    const auto& p = ws.act[last];
    for (std::size_t j = 0; j < g.size(); ++j) g[j] = p[j] - (j == label ? T{1} : T{0});
  }

  for (std::size_t i = last; i-- > 1;) {
    const Node& n = nodes[i];
    const auto& gout = ws.grad[i];
    if (n.spec.kind == LayerKind::input) continue;
    auto& gin = ws.grad[n.inputs[0]];
    const auto& in = ws.act[n.inputs[0]];
    const Shape& in_shape = nodes[n.inputs[0]].shape;
    switch (n.spec.kind) {
    case LayerKind::input: break;
    case LayerKind::conv2d:
      detail::conv_backward<T>(n.spec, in_shape, n.shape, net.params(i), in, gout, gin, grads.params[i]);
      break;
    case LayerKind::maxpool:
      for (std::size_t j = 0; j < gout.size(); ++j) gin[ws.argmax[i][j]] += gout[j];
      break;
    case LayerKind::add: {
      auto& gr = ws.grad[n.inputs[1]];
      for (std::size_t j = 0; j < gout.size(); ++j) {
        gin[j] += gout[j];
        gr[j] += gout[j];
      }
      break;
    }
    case LayerKind::global_avg_pool: {
      const std::size_t plane = in_shape.h * in_shape.w;
      const T inv = T{1} / static_cast<T>(plane);
      for (std::size_t c = 0; c < in_shape.c; ++c)
        for (std::size_t j = 0; j < plane; ++j) gin[c * plane + j] += gout[c] * inv;
      break;
    }
    case LayerKind::dense: {
      const auto& p = net.params(i);
      auto& gp = grads.params[i];
      const std::size_t nin = n.spec.in_features;
      for (std::size_t o = 0; o < n.spec.out_features; ++o) {
        const T go = gout[o];
        gp.bias[o] += go;
        const T* w = p.weights.data() + o * nin;
        T* gw = gp.weights.data() + o * nin;
        for (std::size_t j = 0; j < nin; ++j) {
          gw[j] += go * in[j];
          gin[j] += go * w[j];
        }
      }
      break;
    }
    case LayerKind::relu:
      for (std::size_t j = 0; j < gout.size(); ++j) gin[j] += in[j] > T{0} ? gout[j] : T{0};
      break;
    case LayerKind::softmax: {
      // Interior softmax: dL/dz_j = p_j (g_j - sum_k g_k p_k).
      const auto& p = ws.act[i];
      T dot = 0;
      for (std::size_t j = 0; j < p.size(); ++j) dot += gout[j] * p[j];
      for (std::size_t j = 0; j < p.size(); ++j) gin[j] += p[j] * (gout[j] - dot);
      break;
    }
    }
  }
  std::copy(ws.grad[0].begin(), ws.grad[0].end(), grads.input.begin());
  return loss;
}

template <typename T>
T backward(const Network<T>& net, std::span<const T> input, std::size_t label, Gradients<T>& grads) {
  Workspace<T> ws;
  return backward(net, input, label, ws, grads);
}

}  // namespace servoguard::nn
