#include <gtest/gtest.h>

#include <functional>
#include <thread>

#include "gradcheck.hpp"
#include "support.hpp"

using namespace servoguard;
using namespace servoguard::nn;

namespace {

using sgtest::check_gradients;
using sgtest::GradCheck;
using sgtest::randomize;

void expect_gradients_ok(const Network<double>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto input = sgtest::random_values(rng, net.input_shape().size(), -1.0, 1.0);
  for (std::size_t label = 0; label < 2; ++label) {
    const GradCheck r = check_gradients(net, input, label);
    EXPECT_GT(r.checked, 0u);
    EXPECT_EQ(r.failures, 0u) << "worst relative error " << r.worst_rel;
  }
}

}  // namespace

// ----------------------------------------------------------------- topology

TEST(ToyResNet, ParameterCountIs7914) {
  const auto net = build_toy_resnet();
  EXPECT_EQ(net.parameter_count(), 7914u);
}

TEST(ToyResNet, PerLayerCountsMatchTheTable) {
  const auto net = build_toy_resnet();
  std::vector<std::size_t> counts;
  std::vector<std::string> names;
  for (std::size_t i : net.parameter_layers()) {
    counts.push_back(net.node(i).spec.parameter_count());
    names.push_back(net.node(i).name);
  }
  EXPECT_EQ(counts, (std::vector<std::size_t>{224, 1168, 1160, 1168, 1160, 1168, 1160, 576, 130}));
  EXPECT_EQ(names.front(), "conv2d_7");
  EXPECT_EQ(names.back(), "dense_3");
}

TEST(ToyResNet, ParameterAccountingFormula) {
  const auto net = build_toy_resnet();
  std::size_t total = 0;
  for (const auto& n : net.nodes()) {
    const auto& s = n.spec;
    if (s.kind == LayerKind::conv2d) total += 3 * 3 * s.in_channels * s.out_channels + s.out_channels;
    if (s.kind == LayerKind::dense) total += s.in_features * s.out_features + s.out_features;
  }
  EXPECT_EQ(total, kToyResNetParameters);
}

TEST(ToyResNet, ShapesAndSkipWiring) {
  const auto net = build_toy_resnet();
  EXPECT_EQ(net.input_shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(net.output_shape(), (Shape{2, 1, 1}));
  std::size_t adds = 0;
  for (const auto& n : net.nodes()) {
    if (n.spec.kind == LayerKind::maxpool) { EXPECT_EQ(n.shape, (Shape{16, 9, 9})); }
    if (n.spec.kind == LayerKind::add) {
      ++adds;
      ASSERT_EQ(n.inputs.size(), 2u);
      EXPECT_EQ(n.shape, (Shape{16, 9, 9}));
    }
    if (n.spec.kind == LayerKind::global_avg_pool) { EXPECT_EQ(n.shape, (Shape{8, 1, 1})); }
  }
  EXPECT_EQ(adds, 2u);
}

TEST(Network, AddRejectsMismatchedShapes) {
  Network<double> net;
  const auto x = net.input({2, 5, 5});
  const auto a = net.conv2d(x, 3, Padding::valid);
  EXPECT_THROW(net.add(x, a), StructuralError);
}

// ----------------------------------------------------------------- forward

TEST(Forward, SingleConvSumsFourOnes) {
  Network<double> net;
  const auto x = net.input({1, 2, 2});
  net.conv2d(x, 1, Padding::valid, 2);
  std::fill(net.params(1).weights.begin(), net.params(1).weights.end(), 1.0);
  Workspace<double> ws;
  const std::vector<double> ones(4, 1.0);
  const auto out = run<double>(net, ones, ws);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], 4.0);
}

TEST(Forward, ZeroLogitsGiveEvenProbabilities) {
  Network<double> net;
  const auto x = net.input({1, 1, 3});
  net.softmax(net.dense(x, 2));
  const std::vector<double> in{0.3, -2.0, 5.0};
  const auto r = forward<double>(net, in);
  EXPECT_EQ(r.logits, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(r.probabilities, (std::vector<double>{0.5, 0.5}));
}

TEST(Forward, ZeroResidualBranchIsIdentity) {
  auto net = build_toy_resnet<double>(3);
  for (const auto& n : net.nodes())
    if (n.spec.kind == LayerKind::add) {
      // Left operand is the branch output (relu of the second conv); walk back to both convs.
      std::size_t relu2 = n.inputs[0];
      std::size_t conv2 = net.node(relu2).inputs[0];
      std::size_t relu1 = net.node(conv2).inputs[0];
      std::size_t conv1 = net.node(relu1).inputs[0];
      for (std::size_t c : {conv1, conv2}) {
        std::fill(net.params(c).weights.begin(), net.params(c).weights.end(), 0.0);
        std::fill(net.params(c).bias.begin(), net.params(c).bias.end(), 0.0);
      }
    }
  std::mt19937_64 rng(4);
  const auto in = sgtest::random_values(rng, kImageSize, 0.0, 1.0);
  Workspace<double> ws;
  run<double>(net, in, ws);
  for (std::size_t i = 0; i < net.size(); ++i)
    if (net.node(i).spec.kind == LayerKind::add) { EXPECT_EQ(ws.act[i], ws.act[net.node(i).inputs[1]]); }
}

TEST(Forward, ProbabilitiesFormADistribution) {
  const auto net = build_toy_resnet<double>(5);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto in = sgtest::random_values(rng, kImageSize, 0.0, 1.0);
    const auto r = forward<double>(net, in);
    EXPECT_NEAR(r.probabilities[0] + r.probabilities[1], 1.0, 1e-12);
    for (double p : r.probabilities) {
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
    }
  }
}

TEST(Forward, Deterministic) {
  const auto net = build_toy_resnet<double>(6);
  std::mt19937_64 rng(6);
  const auto in = sgtest::random_values(rng, kImageSize, 0.0, 1.0);
  EXPECT_EQ(forward<double>(net, in).logits, forward<double>(net, in).logits);
}

TEST(Forward, InputSizeMismatchIsStructural) {
  const auto net = build_toy_resnet<double>();
  const std::vector<double> in(100, 0.5);
  EXPECT_THROW(forward<double>(net, in), StructuralError);
}

TEST(Forward, CorruptedParametersAreStructural) {
  auto net = build_toy_resnet<double>();
  net.params(net.parameter_layers()[2]).weights.pop_back();
  const std::vector<double> in(kImageSize, 0.5);
  EXPECT_THROW(forward<double>(net, in), StructuralError);
}

TEST(Forward, SinglePrecisionTracksDouble) {
  const auto net = build_toy_resnet<double>(7);
  const auto net32 = network_cast<float>(net);
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto in = sgtest::random_values(rng, kImageSize, 0.0, 1.0);
    const std::vector<float> in32(in.begin(), in.end());
    const auto a = forward<double>(net, in);
    const auto b = forward<float>(net32, in32);
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(a.logits[j], b.logits[j], 1e-4);
  }
}

// ----------------------------------------------------------------- backward

TEST(Backward, PerfectPredictionHasVanishingLoss) {
  const std::vector<double> logits{60.0, 0.0};
  EXPECT_LT(cross_entropy<double>(logits, 0), 1e-20);
  EXPECT_NEAR(cross_entropy<double>(logits, 1), 60.0, 1e-12);
}

TEST(GradientCheck, ConvValid) {
  Network<double> net;
  const auto x = net.input({2, 5, 5});
  net.softmax(net.dense(net.conv2d(x, 3, Padding::valid), 2));
  randomize(net, 1);
  expect_gradients_ok(net, 11);
}

TEST(GradientCheck, ConvSame) {
  Network<double> net;
  const auto x = net.input({2, 4, 5});
  net.softmax(net.dense(net.conv2d(x, 2, Padding::same), 2));
  randomize(net, 2);
  expect_gradients_ok(net, 12);
}

TEST(GradientCheck, MaxPool) {
  Network<double> net;
  const auto x = net.input({2, 6, 7});
  net.softmax(net.dense(net.maxpool(x, 3, 3), 2));
  randomize(net, 3);
  expect_gradients_ok(net, 13);
}

TEST(GradientCheck, AddFlowsThroughBothBranches) {
  Network<double> net;
  const auto x = net.input({2, 4, 4});
  const auto branch = net.conv2d(x, 2, Padding::same);
  net.softmax(net.dense(net.add(branch, x), 2));
  randomize(net, 4);
  expect_gradients_ok(net, 14);
}

TEST(GradientCheck, GlobalAveragePool) {
  Network<double> net;
  const auto x = net.input({3, 4, 4});
  net.softmax(net.dense(net.global_avg_pool(x), 2));
  randomize(net, 5);
  expect_gradients_ok(net, 15);
}

TEST(GradientCheck, Dense) {
  Network<double> net;
  const auto x = net.input({1, 1, 6});
  net.softmax(net.dense(net.dense(x, 4), 2));
  randomize(net, 6);
  expect_gradients_ok(net, 16);
}

TEST(GradientCheck, Relu) {
  Network<double> net;
  const auto x = net.input({1, 1, 6});
  net.softmax(net.dense(net.relu(net.dense(x, 5)), 2));
  randomize(net, 7);
  expect_gradients_ok(net, 17);
}

TEST(GradientCheck, InteriorSoftmax) {
  Network<double> net;
  const auto x = net.input({1, 1, 4});
  net.softmax(net.dense(net.softmax(net.dense(x, 3)), 2));
  randomize(net, 8, 2.0);
  expect_gradients_ok(net, 18);
}

TEST(GradientCheck, ReducedResNet) {
  auto net = build_resnet<double>(reduced_resnet_config(), 9);
  randomize(net, 9);
  expect_gradients_ok(net, 19);
}

TEST(Backward, ZeroBranchMatchesSkipOnlyNetwork) {
  const ResNetConfig cfg = reduced_resnet_config();
  auto full = build_resnet<double>(cfg, 21);
  randomize(full, 21);

  // Skip-only network: the same graph without the residual blocks.
  Network<double> skip;
  std::size_t x = skip.input(cfg.input);
  x = skip.relu(skip.conv2d(x, cfg.stem1, Padding::valid));
  x = skip.relu(skip.conv2d(x, cfg.stem2, Padding::valid));
  x = skip.maxpool(x, 3, 3);
  x = skip.relu(skip.conv2d(x, cfg.head_conv, Padding::valid));
  x = skip.relu(skip.dense(skip.global_avg_pool(x), cfg.hidden));
  skip.softmax(skip.dense(x, cfg.classes));

  const auto full_layers = full.parameter_layers();
  const auto skip_layers = skip.parameter_layers();
  std::vector<std::size_t> branch;
  for (std::size_t l = 2; l < 2 + 2 * cfg.blocks; ++l) branch.push_back(full_layers[l]);
  for (std::size_t c : branch) {
    std::fill(full.params(c).weights.begin(), full.params(c).weights.end(), 0.0);
    std::fill(full.params(c).bias.begin(), full.params(c).bias.end(), 0.0);
  }
  std::size_t s = 0;
  for (std::size_t l = 0; l < full_layers.size(); ++l) {
    if (std::find(branch.begin(), branch.end(), full_layers[l]) != branch.end()) continue;
    skip.params(skip_layers[s++]) = full.params(full_layers[l]);
  }
  ASSERT_EQ(s, skip_layers.size());

  std::mt19937_64 rng(22);
  const auto in = sgtest::random_values(rng, cfg.input.size(), 0.0, 1.0);
  Gradients<double> gf(full), gs(skip);
  const double lf = backward<double>(full, in, 1, gf);
  const double ls = backward<double>(skip, in, 1, gs);
  EXPECT_EQ(lf, ls);
  double stem_norm = 0;
  for (double g : gf.params[full_layers[0]].weights) stem_norm += std::abs(g);
  EXPECT_GT(stem_norm, 0.0);
  // Skip-path gradients agree with the skip-only network.
  for (std::size_t j = 0; j < gf.params[full_layers[0]].weights.size(); ++j)
    EXPECT_NEAR(gf.params[full_layers[0]].weights[j], gs.params[skip_layers[0]].weights[j], 1e-12);
}

TEST(Backward, AccumulatesParameterGradients) {
  auto net = build_resnet<double>(reduced_resnet_config(), 23);
  std::mt19937_64 rng(23);
  const auto in = sgtest::random_values(rng, net.input_shape().size(), 0.0, 1.0);
  Gradients<double> once(net), twice(net);
  backward<double>(net, in, 0, once);
  backward<double>(net, in, 0, twice);
  backward<double>(net, in, 0, twice);
  for (std::size_t i : net.parameter_layers())
    for (std::size_t j = 0; j < once.params[i].weights.size(); ++j)
      ASSERT_NEAR(twice.params[i].weights[j], 2 * once.params[i].weights[j], 1e-12);
}

// ----------------------------------------------------------------- optimizer

TEST(Adam, ZeroGradientsLeaveParametersUnchanged) {
  auto net = build_toy_resnet<double>(31);
  const auto before = net;
  Gradients<double> g(net);
  AdamState<double> s(net);
  for (int i = 0; i < 5; ++i) adam_step(net, g, s, 1e-3);
  EXPECT_TRUE(net == before);
}

TEST(Adam, ConstantPositiveGradientDecreasesParameter) {
  Network<double> net;
  net.softmax(net.dense(net.input({1, 1, 1}), 1));
  net.params(1).weights[0] = 1.0;
  Gradients<double> g(net);
  g.params[1].weights[0] = 0.25;
  AdamState<double> s(net);
  double prev = net.params(1).weights[0];
  for (int i = 0; i < 200; ++i) {
    adam_step(net, g, s, 1e-2);
    const double now = net.params(1).weights[0];
    ASSERT_LT(now, prev);
    prev = now;
  }
  // Bias correction makes the first steps exactly lr in size.
  EXPECT_NEAR(1.0 - prev, 200 * 1e-2, 1e-6);
}

TEST(Adam, IdenticalNetworksStayIdentical) {
  auto a = build_resnet<double>(reduced_resnet_config(), 32);
  auto b = a;
  AdamState<double> sa(a), sb(b);
  std::mt19937_64 rng(32);
  for (int step = 0; step < 5; ++step) {
    const auto in = sgtest::random_values(rng, a.input_shape().size(), 0.0, 1.0);
    Gradients<double> ga(a), gb(b);
    backward<double>(a, in, step % 2, ga);
    backward<double>(b, in, step % 2, gb);
    adam_step(a, ga, sa, 1e-3);
    adam_step(b, gb, sb, 1e-3);
  }
  EXPECT_TRUE(a == b);
}

// ----------------------------------------------------------------- weight file

TEST(Weights, RoundTrip) {
  const auto net = build_toy_resnet<double>(41);
  const Bytes blob = save_weights(net);
  const auto back = load_weights<double>(blob);
  EXPECT_TRUE(back == net);
}

TEST(Weights, FileSizeFromFormat) {
  const auto net = build_toy_resnet<double>();
  // magic 4 + version 2 + layer count 2; per layer kind 1 + four u16 dims; f32 payload; CRC 4.
  const std::size_t layers = 9;
  const std::size_t expected = (4 + 2 + 2) + layers * (1 + 4 * 2) + 7914 * 4 + 4;
  EXPECT_EQ(expected, 31749u);
  EXPECT_EQ(save_weights(net).size(), expected);
  EXPECT_EQ(weight_file_size(net), expected);
}

TEST(Weights, LayoutIsLittleEndianWithTrailingCrc) {
  const Bytes blob = save_weights(build_toy_resnet<double>());
  EXPECT_EQ(std::string(blob.begin(), blob.begin() + 4), "TRNW");
  EXPECT_EQ(blob[4], 1);
  EXPECT_EQ(blob[5], 0);
  EXPECT_EQ(blob[6], 9);
  EXPECT_EQ(blob[7], 0);
  EXPECT_EQ(blob[8], static_cast<std::uint8_t>(LayerKind::conv2d));
  EXPECT_EQ(blob[9], 8);   // out channels
  EXPECT_EQ(blob[11], 3);  // in channels
  const std::uint32_t stored = blob[blob.size() - 4] | blob[blob.size() - 3] << 8 | blob[blob.size() - 2] << 16 |
                               static_cast<std::uint32_t>(blob[blob.size() - 1]) << 24;
  EXPECT_EQ(stored, crc32_ieee(std::span(blob).first(blob.size() - 4)));
}

namespace {
LoadError::Code load_code(std::span<const std::uint8_t> blob) {
  try {
    load_weights<double>(blob);
  } catch (const LoadError& e) {
    return e.code();
  }
  ADD_FAILURE() << "load succeeded";
  return LoadError::Code::bad_magic;
}
}  // namespace

TEST(Weights, DistinctLoadErrors) {
  const Bytes good = save_weights(build_toy_resnet<double>(42));
  Bytes b = good;
  b[0] = 'X';
  EXPECT_EQ(load_code(b), LoadError::Code::bad_magic);
  b = good;
  b[4] = 2;
  EXPECT_EQ(load_code(b), LoadError::Code::bad_version);
  b = good;
  b.resize(b.size() - 100);
  EXPECT_EQ(load_code(b), LoadError::Code::truncated);
  b = good;
  b[5000] ^= 0x01;
  EXPECT_EQ(load_code(b), LoadError::Code::checksum);
  const Bytes other = save_weights(build_resnet<double>(reduced_resnet_config()));
  EXPECT_EQ(load_code(other), LoadError::Code::shape_mismatch);
  EXPECT_EQ(load_code(std::span(good).first(6)), LoadError::Code::truncated);
}

TEST(Weights, FailedLoadLeavesNetworkUntouched) {
  auto net = build_toy_resnet<double>(43);
  const auto before = net;
  Bytes bad = save_weights(build_toy_resnet<double>(44));
  bad[3000] ^= 0x80;
  EXPECT_THROW(load_weights_into(net, bad), LoadError);
  EXPECT_TRUE(net == before);
}

TEST(Weights, StoredAsFloat32) {
  auto net = build_toy_resnet<double>(45);
  net.params(net.parameter_layers()[0]).weights[0] = 0.1;  // not representable in float
  const auto back = load_weights<double>(save_weights(net));
  EXPECT_EQ(back.params(net.parameter_layers()[0]).weights[0], static_cast<double>(0.1f));
}

TEST(Inference, SharedNetworkAcrossThreads) {
  const auto net = network_cast<float>(build_toy_resnet<double>(46));
  std::mt19937_64 rng(46);
  const auto in = sgtest::random_values(rng, kImageSize, 0.0, 1.0);
  const std::vector<float> x(in.begin(), in.end());
  const auto ref = forward<float>(net, x).probabilities;
  std::vector<std::vector<float>> got(4);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < got.size(); ++t)
    pool.emplace_back([&, t] {
      Workspace<float> ws;
      for (int i = 0; i < 10; ++i) got[t] = forward<float>(net, x, ws).probabilities;
    });
  for (auto& t : pool) t.join();
  for (const auto& g : got) EXPECT_EQ(g, ref);
}
