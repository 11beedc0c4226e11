#pragma once

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prach/nn/network.hpp"
#include "prach/nn/optim.hpp"
#include "prach/rng.hpp"

namespace prach::nn {

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double learning_rate = 1e-2;
  int batch_size = 256;
  int max_epochs = 40;
  int patience = 10;  ///< early stop after this many epochs without a new best
  std::uint64_t seed = 1;
};

struct EpochStat {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  bool best = false;
};

/// Examples stored back to back: example e occupies rows
/// [e*rows_per_example, (e+1)*rows_per_example) of `features`.
template <typename S>
struct DataView {
  const MatX<S>* features = nullptr;
  const std::vector<int>* labels = nullptr;
  Eigen::Index rows_per_example = 1;

  Eigen::Index count() const {
    return labels == nullptr ? 0 : static_cast<Eigen::Index>(labels->size());
  }
  void check() const {
    if (features == nullptr || labels == nullptr) throw std::invalid_argument("data view: null");
    if (features->rows() != count() * rows_per_example)
      throw std::invalid_argument("data view: feature/label count mismatch");
  }
};

template <typename S>
struct TrainResult {
  ModelParams<S> best_params;
  std::vector<EpochStat> log;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
  Adam<S> final_adam{0.0};  ///< optimizer state at the last executed step
};

struct TrainingDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename S>
void gather_batch(const DataView<S>& data, const std::vector<Eigen::Index>& order,
                  Eigen::Index first, Eigen::Index count, MatX<S>& x, std::vector<int>& y) {
  const Eigen::Index rpe = data.rows_per_example;
  x.resize(count * rpe, data.features->cols());
  y.resize(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < count; ++i) {
    const Eigen::Index e = order[static_cast<std::size_t>(first + i)];
    x.middleRows(i * rpe, rpe) = data.features->middleRows(e * rpe, rpe);
    y[static_cast<std::size_t>(i)] = (*data.labels)[static_cast<std::size_t>(e)];
  }
}

}  // namespace detail

/// Eval-mode class predictions, batched.
template <typename S>
std::vector<int> predict(const Network<S>& net, const ModelParams<S>& params,
                         const DataView<S>& data, int batch_size = 512) {
  data.check();
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(data.count()));
  typename Network<S>::Cache cache;
  const Eigen::Index n = data.count();
  const Eigen::Index rpe = data.rows_per_example;
  for (Eigen::Index at = 0; at < n; at += batch_size) {
    const Eigen::Index bn = std::min<Eigen::Index>(batch_size, n - at);
    const auto& probs = net.forward_eval(params, data.features->middleRows(at * rpe, bn * rpe), cache);
    for (int v : Network<S>::argmax_rows(probs)) out.push_back(v);
  }
  return out;
}

template <typename S>
double accuracy(const Network<S>& net, const ModelParams<S>& params, const DataView<S>& data,
                int batch_size = 512) {
  const auto pred = predict(net, params, data, batch_size);
  long correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == (*data.labels)[i]) ++correct;
  return pred.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(pred.size());
}

/// Minibatch training with shuffling, per-epoch validation accuracy and
/// early stopping; returns the parameters of the best validation epoch.
/// Fully deterministic given cfg.seed.
template <typename S>
TrainResult<S> train(const Network<S>& net, ModelParams<S> params, const DataView<S>& train_set,
                     const DataView<S>& val_set, const TrainConfig& cfg) {
  train_set.check();
  val_set.check();
  if (train_set.count() == 0 || val_set.count() == 0)
    throw std::invalid_argument("train: empty train or validation set");
  if (cfg.batch_size < 1 || !(cfg.learning_rate > 0.0))
    throw std::invalid_argument("train: bad config");

  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng(derive_seed(cfg.seed, 0xd0));
  Optimizer<S> opt(cfg.optimizer, cfg.learning_rate);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(train_set.count()));
  std::iota(order.begin(), order.end(), 0);

  TrainResult<S> result;
  result.best_params = params;
  typename Network<S>::Cache cache;
  MatX<S> x;
  std::vector<int> y;
  VecX<S> grad;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    long batches = 0;
    for (Eigen::Index at = 0; at < train_set.count(); at += cfg.batch_size) {
      const Eigen::Index bn = std::min<Eigen::Index>(cfg.batch_size, train_set.count() - at);
      detail::gather_batch(train_set, order, at, bn, x, y);
      net.forward(params, x, Mode::Train, &dropout_rng, cache);
      const double loss = net.loss(cache, y);
      if (!std::isfinite(loss)) {
        std::ostringstream oss;
        oss << "training diverged: non-finite loss at epoch " << epoch << ", batch " << batches
            << " (" << optimizer_name(cfg.optimizer) << ", lr=" << cfg.learning_rate << ")";
        throw TrainingDiverged(oss.str());
      }
      loss_sum += loss * static_cast<double>(bn);
      ++batches;
      net.backward(params, cache, y, grad);
      opt.step(params.theta, grad);
    }
    EpochStat stat;
    stat.epoch = epoch;
    stat.train_loss = loss_sum / static_cast<double>(train_set.count());
    stat.val_accuracy = accuracy(net, params, val_set, cfg.batch_size);
    if (stat.val_accuracy > result.best_val_accuracy || result.best_epoch < 0) {
      result.best_val_accuracy = stat.val_accuracy;
      result.best_epoch = epoch;
      result.best_params = params;
      stat.best = true;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.log.push_back(stat);
    if (since_best > cfg.patience) break;
  }
  result.final_adam = opt.adam_state();
  return result;
}

/// Line-oriented structured text rendering of a training log.
inline std::string format_train_log(const std::vector<EpochStat>& log, const std::string& header) {
  std::ostringstream oss;
  oss << "# " << header << "\n";
  char buf[160];
  for (const auto& s : log) {
    std::snprintf(buf, sizeof(buf), "epoch=%d train_loss=%.6f val_acc=%.6f best=%d\n", s.epoch,
                  s.train_loss, s.val_accuracy, s.best ? 1 : 0);
    oss << buf;
  }
  return oss.str();
}

}  // namespace prach::nn
