#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "prach/corr_rx.hpp"
#include "prach/dataset.hpp"
#include "prach/nn/network.hpp"
#include "prach/nn/optim.hpp"
#include "prach/nn/train.hpp"

namespace prach {

/// Architecture knobs of the residual classifier. Defaults are the
/// full-size receiver; tests shrink h / conv_channels / n_out.
struct GraphConfig {
  int h = 139;
  int w = 2;
  int c_in = 2;
  int conv_channels = 64;
  int n_hidden_convs = 3;
  int kh = 3;
  int kw = 2;
  int dense_width = 128;
  int n_out = 10;
  double dropout_p = 0.4;
  double lrelu_slope = 0.01;
};

/// BN+LReLU stem, three wide convolutions each with BN+LReLU, a 2-filter
/// projection added back onto the stem output, then flatten, dropout,
/// a 128-wide ReLU dense layer and a softmax head.
inline nn::NetworkBuilder make_classifier_builder(const GraphConfig& g) {
  nn::NetworkBuilder b = nn::NetworkBuilder::spatial_input(g.h, g.w, g.c_in);
  b.batch_norm();
  const int stem = b.leaky_relu(g.lrelu_slope);
  for (int i = 0; i < g.n_hidden_convs; ++i) {
    b.conv2d(g.conv_channels, g.kh, g.kw);
    b.batch_norm();
    b.leaky_relu(g.lrelu_slope);
  }
  b.conv2d(g.c_in, g.kh, g.kw);  // back to the stem width for the skip add
  b.add_residual(stem);
  b.flatten();
  b.dropout(g.dropout_p);
  b.dense(g.dense_width);
  b.relu();
  b.dense(g.n_out);
  b.softmax();
  return b;
}

template <typename S>
nn::Network<S> make_classifier(const GraphConfig& g) {
  return nn::Network<S>(make_classifier_builder(g));
}

/// One receiver-side classifier: graph, input view, optimizer binding.
struct PrachModelSpec {
  GraphConfig graph{};
  InputTransform transform = InputTransform::RawFreq;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Sgd;
  double learning_rate = 1e-2;
  std::string name = "rapid";
};

struct PrachModel {
  PrachModelSpec spec;
  nn::Network<float> net;
  nn::ModelParams<float> params;
  bool trained = false;

  Eigen::Index rows_per_example() const { return net.input_rows_per_example(); }
};

/// Preamble-id classifier: raw frequency-domain input, 10 classes, SGD.
inline PrachModel build_rapid_model(std::uint64_t seed, int n_out = 10) {
  PrachModel m;
  m.spec.graph.n_out = n_out;
  m.spec.transform = InputTransform::RawFreq;
  m.spec.optimizer = nn::OptimizerKind::Sgd;
  m.spec.learning_rate = 1e-2;
  m.spec.name = "rapid";
  m.net = make_classifier<float>(m.spec.graph);
  m.params = m.net.init_params(seed);
  return m;
}

/// Timing-advance classifier: lag-domain input, 12 classes, Adam.
inline PrachModel build_ta_model(std::uint64_t seed, int n_out = kTaClasses) {
  PrachModel m;
  m.spec.graph.n_out = n_out;
  m.spec.transform = InputTransform::Idft139;
  m.spec.optimizer = nn::OptimizerKind::Adam;
  m.spec.learning_rate = 1e-3;
  m.spec.name = "ta";
  m.net = make_classifier<float>(m.spec.graph);
  m.params = m.net.init_params(seed);
  return m;
}

/// Runs one model on one grid; returns (class, confidence).
inline std::pair<int, double> nn_classify(const PrachModel& m, const GridF& grid) {
  if (!m.trained) throw std::logic_error("nn_classify: model '" + m.spec.name + "' is untrained");
  const nn::MatX<float> x = instance_features<float>(grid, m.spec.transform);
  nn::Network<float>::Cache cache;
  const auto& probs = m.net.forward_eval(m.params, x, cache);
  Eigen::Index j = 0;
  const float p = probs.row(0).maxCoeff(&j);
  return {static_cast<int>(j), static_cast<double>(p)};
}

/// The two classifiers share the received grid and have no data dependency
/// on each other; evaluation order is irrelevant.
inline Detection nn_decode(const PrachModel& rapid, const PrachModel& ta, const GridF& grid) {
  const auto [r, pr] = nn_classify(rapid, grid);
  const auto [t, pt] = nn_classify(ta, grid);
  Detection det;
  det.rapid = r;
  det.ta = t;
  det.peak_metric = std::min(pr, pt);  // the weaker of the two confidences
  det.slack = false;
  return det;
}

// checkpoint io (checkpoint.cpp)
void save_checkpoint(const std::string& path, const PrachModel& model,
                     const nn::Adam<float>* adam_state = nullptr);
PrachModel load_checkpoint(const std::string& path, nn::Adam<float>* adam_state = nullptr);

}  // namespace prach
