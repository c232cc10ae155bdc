#include <gtest/gtest.h>

#include "support.hpp"

using namespace servoguard;
using namespace servoguard::nn;

namespace {

// Fault probability rises with the mean pixel value: p = sigmoid(10 * mean - 5).
Network<float> level_net() {
  Network<float> net;
  const auto x = net.input({3, 32, 32});
  const auto d = net.dense(net.global_avg_pool(x), 2);
  net.softmax(d);
  auto& p = net.params(d);
  for (std::size_t c = 0; c < 3; ++c) p.weights[3 + c] = 10.0f / 3.0f;
  p.bias[1] = -5.0f;
  return net;
}

FeatureImage flat_image(float v) {
  FeatureImage img;
  img.pixels.fill(v);
  return img;
}

const FeatureImage kFault = flat_image(1.0f);
const FeatureImage kNormal = flat_image(0.0f);

// Ends in a three-way softmax: rejected by the classifier on every window.
Network<float> broken_net() {
  Network<float> net;
  const auto x = net.input({3, 32, 32});
  net.softmax(net.dense(net.global_avg_pool(x), 3));
  return net;
}

}  // namespace

TEST(Debouncer, TwoOfThree) {
  Debouncer d({2, 3});
  EXPECT_FALSE(d.update(true));
  EXPECT_FALSE(d.update(false));
  EXPECT_FALSE(d.update(false));
  EXPECT_FALSE(d.update(true));
  EXPECT_FALSE(d.update(false));  // [F,T,F]
  EXPECT_TRUE(d.update(true));    // [T,F,T]
}

TEST(Debouncer, ConsecutiveFaultsTrip) {
  Debouncer d({2, 3});
  EXPECT_FALSE(d.update(true));
  EXPECT_TRUE(d.update(true));
}

TEST(Debouncer, LatchIsMonotoneUntilReset) {
  std::mt19937_64 rng(3);
  Debouncer d({2, 3});
  d.update(true);
  d.update(true);
  for (int i = 0; i < 200; ++i) EXPECT_TRUE(d.update(rng() % 2 == 0));
  d.reset();
  EXPECT_FALSE(d.tripped());
  EXPECT_FALSE(d.update(true));
}

TEST(Debouncer, RejectsInvalidVote) {
  EXPECT_THROW(Debouncer({0, 3}), ConfigError);
  EXPECT_THROW(Debouncer({4, 3}), ConfigError);
}

TEST(VerdictEngine, ThresholdAndTrip) {
  const auto net = level_net();
  VerdictEngine e(net, DetectorConfig{});
  const auto n = e.judge(kNormal, 0);
  EXPECT_FALSE(n.is_fault);
  EXPECT_LT(n.fault_probability, 0.01);
  const auto f1 = e.judge(kFault, 1);
  EXPECT_TRUE(f1.is_fault);
  EXPECT_FALSE(f1.tripped);
  const auto f2 = e.judge(kFault, 2);
  EXPECT_TRUE(f2.tripped);
  EXPECT_EQ(f2.window_seq, 2u);
  EXPECT_TRUE(e.judge(kNormal, 3).tripped);
  e.reset();
  EXPECT_FALSE(e.judge(kNormal, 4).tripped);
}

TEST(VerdictEngine, FailSafeOnInferenceError) {
  const auto net = broken_net();
  VerdictEngine e(net, DetectorConfig{});
  const auto v = e.judge(kNormal, 0);
  EXPECT_TRUE(v.inference_error);
  EXPECT_TRUE(v.is_fault);
  EXPECT_TRUE(v.tripped);
  EXPECT_TRUE(e.tripped());
}

TEST(DetectorConfig, Validation) {
  DetectorConfig c;
  EXPECT_NO_THROW(c.validate());
  c.hop = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DetectorConfig{};
  c.score_threshold = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = DetectorConfig{};
  c.debounce = {3, 2};
  EXPECT_THROW(c.validate(), ConfigError);
  const auto net = level_net();
  EXPECT_THROW(StreamingDetector(net, c), ConfigError);
}

TEST(WindowAssembler, OldestToNewest) {
  WindowAssembler a(256);
  std::size_t ready = 0;
  for (std::size_t k = 0; k < 3000; ++k) {
    if (a.push(static_cast<double>(k))) {
      ++ready;
      const auto w = a.window();
      ASSERT_EQ(w.front(), static_cast<double>(k + 1 - kWindowLength));
      ASSERT_EQ(w.back(), static_cast<double>(k));
      for (std::size_t i = 1; i < kWindowLength; ++i) ASSERT_EQ(w[i], w[i - 1] + 1);
    }
  }
  EXPECT_EQ(ready, (3000 - 1024) / 256 + 1);
}

TEST(StreamingDetector, NoVerdictBeforeBufferFills) {
  const auto net = level_net();
  StreamingDetector det(net, DetectorConfig{});
  for (std::size_t k = 0; k + 1 < kWindowLength; ++k) ASSERT_FALSE(det.push_sample(1.0).has_value());
  const auto v = det.push_sample(1.0);
  ASSERT_TRUE(v.has_value());
  EXPECT_EQ(v->window_seq, 0u);
  EXPECT_EQ(v->last_sample, kWindowLength - 1);
  for (std::size_t k = 0; k < 255; ++k) ASSERT_FALSE(det.push_sample(1.0).has_value());
  EXPECT_TRUE(det.push_sample(1.0).has_value());
}

TEST(StreamingDetector, ResetClearsLatchAndBuffer) {
  const auto net = broken_net();
  StreamingDetector det(net, DetectorConfig{});
  for (std::size_t k = 0; k < kWindowLength; ++k) det.push_sample(1.0);
  EXPECT_TRUE(det.tripped());
  det.reset();
  EXPECT_FALSE(det.tripped());
  EXPECT_EQ(det.samples_seen(), 0u);
  EXPECT_FALSE(det.push_sample(1.0).has_value());
}

TEST(StreamingDetector, MatchesBatchOracle) {
  const auto net = network_cast<float>(build_toy_resnet<double>(11));
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    SyntheticConfig sc;
    sc.duration = 4.0;
    const auto trace = random_trace(seed, seed % 2 == 0, sc);
    DetectorConfig cfg;
    cfg.hop = 128 + 64 * seed;
    const auto s = stream_verdicts(net, trace, cfg);
    const auto b = batch_verdicts(net, trace, cfg);
    ASSERT_EQ(s.size(), b.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(s[i], b[i]) << "seed " << seed << " window " << i;
  }
}
