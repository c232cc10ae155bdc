#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "servoguard/dataset.hpp"
#include "servoguard/errors.hpp"
#include "servoguard/log.hpp"
#include "servoguard/network.hpp"
#include "servoguard/optimizer.hpp"

namespace servoguard {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
  std::size_t patience = 5;

  void validate(std::size_t train_size) const {
    if (batch_size == 0 || patience == 0 || !(learning_rate > 0))
      throw ConfigError("train: batch_size, patience and learning_rate must be positive");
    if (batch_size > train_size) throw ConfigError("train: batch_size exceeds the training set");
  }
};

/// 2x2 counts indexed [actual][predicted].
struct Confusion {
  std::array<std::array<std::size_t, 2>, 2> counts{};

  std::size_t total() const { return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1]; }
  std::size_t correct() const { return counts[0][0] + counts[1][1]; }
  double accuracy() const { return total() ? static_cast<double>(correct()) / static_cast<double>(total()) : 0.0; }
  bool operator==(const Confusion&) const = default;
};

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;  ///< mean cross-entropy
  Confusion confusion;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
  double best_val_loss = 0;  ///< best validation loss seen so far
  bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;  ///< 1-based; 0 when no epoch ran
  double wall_seconds = 0;
  double test_accuracy = 0;
  Confusion test_confusion;

  /// Everything except wall time, which is the only non-deterministic field.
  bool same_outcome(const TrainReport& o) const {
    return history == o.history && best_epoch == o.best_epoch && test_accuracy == o.test_accuracy &&
           test_confusion == o.test_confusion;
  }
};

/// Class decision from the two probabilities; exact ties go to 0 (normal).
template <typename T>
std::uint8_t predict_label(std::span<const T> probabilities) {
  return probabilities[1] > probabilities[0] ? 1 : 0;
}

namespace detail {
template <typename T>
void to_input(const FeatureImage& img, std::vector<T>& buf) {
  buf.resize(kImageSize);
  for (std::size_t i = 0; i < kImageSize; ++i) buf[i] = static_cast<T>(img.pixels[i]);
}
}  // namespace detail

template <typename T>
EvalResult evaluate(const nn::Network<T>& net, std::span<const LabeledImage> images) {
  if (images.empty()) throw ConfigError("evaluate: empty image set");
  nn::Workspace<T> ws;
  std::vector<T> input;
  EvalResult r;
  double loss = 0;
  for (const auto& li : images) {
    detail::to_input(li.image, input);
    const auto out = nn::forward<T>(net, input, ws);
    loss += static_cast<double>(nn::cross_entropy<T>(out.logits, li.label));
    ++r.confusion.counts[li.label][predict_label<T>(out.probabilities)];
  }
  r.accuracy = r.confusion.accuracy();
  r.loss = loss / static_cast<double>(images.size());
  return r;
}

/// Mini-batch Adam on cross-entropy. On return `net` holds the weights of the
/// best validation epoch (highest accuracy, lower loss breaks ties). Training
/// stops once `patience` epochs pass without that criterion improving.
inline TrainReport train(nn::Network<double>& net, const DatasetSplit& data, const TrainConfig& cfg) {
  if (data.train.empty()) throw ConfigError("train: empty training set");
  if (cfg.epochs > 0) cfg.validate(data.train.size());
  const auto started = std::chrono::steady_clock::now();

  TrainReport report;
  nn::AdamState<double> adam(net);
  nn::Gradients<double> grads(net);
  nn::Workspace<double> ws;
  std::vector<double> input;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto best = net;
  double best_acc = -1, best_loss = std::numeric_limits<double>::infinity();
  double best_val_loss_seen = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    detail::shuffle_indices(order, rng);
    double loss_sum = 0;
    std::size_t correct = 0;
    std::size_t batch_no = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size, ++batch_no) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      grads.zero();
      for (std::size_t j = b; j < end; ++j) {
        const auto& li = data.train[order[j]];
        detail::to_input(li.image, input);
        const double loss = nn::backward<double>(net, input, li.label, ws, grads);
        if (!std::isfinite(loss)) throw TrainingError(epoch, batch_no, "non-finite loss");
        loss_sum += loss;
        correct += predict_label<double>(ws.act.back()) == li.label ? 1 : 0;
      }
      grads.scale(1.0 / static_cast<double>(end - b));
      if (!grads.all_finite()) throw TrainingError(epoch, batch_no, "non-finite gradient");
      nn::adam_step(net, grads, adam, cfg.learning_rate);
    }

    EpochStats st;
    st.epoch = epoch;
    st.train_loss = loss_sum / static_cast<double>(order.size());
    st.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (!data.validation.empty()) {
      const EvalResult v = evaluate<double>(net, data.validation);
      st.val_loss = v.loss;
      st.val_acc = v.accuracy;
    } else {
      st.val_loss = st.train_loss;
      st.val_acc = st.train_acc;
    }
    if (!std::isfinite(st.val_loss)) throw TrainingError(epoch, batch_no, "non-finite validation loss");
    best_val_loss_seen = std::min(best_val_loss_seen, st.val_loss);
    st.best_val_loss = best_val_loss_seen;
    report.history.push_back(st);
    log::info("epoch ", epoch, " train_loss=", st.train_loss, " train_acc=", st.train_acc, " val_loss=", st.val_loss,
              " val_acc=", st.val_acc);

    if (st.val_acc > best_acc || (st.val_acc == best_acc && st.val_loss < best_loss)) {
      best_acc = st.val_acc;
      best_loss = st.val_loss;
      best = net;
      report.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  if (report.best_epoch > 0) net = best;

  if (!data.test.empty()) {
    const EvalResult t = evaluate<double>(net, data.test);
    report.test_accuracy = t.accuracy;
    report.test_confusion = t.confusion;
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

/// `epoch,train_loss,train_acc,val_loss,val_acc`
inline void write_report_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  out.precision(9);
  for (const auto& e : report.history)
    out << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_loss << ',' << e.val_acc << '\n';
}

}  // namespace servoguard
