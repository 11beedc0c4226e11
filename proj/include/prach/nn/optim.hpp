#pragma once

#include <cmath>
#include <stdexcept>

#include "prach/nn/tensor.hpp"

namespace prach::nn {

enum class OptimizerKind { Sgd, Adam };

inline const char* optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::Sgd ? "sgd" : "adam";
}

/// Plain stochastic gradient descent: theta -= lr * grad.
template <typename S>
struct Sgd {
  S lr;
  explicit Sgd(double learning_rate) : lr(static_cast<S>(learning_rate)) {}
  void step(VecX<S>& theta, const VecX<S>& grad) { theta -= lr * grad; }
};

/// Adam with bias correction.
template <typename S>
struct Adam {
  S lr;
  S beta1 = static_cast<S>(0.9);
  S beta2 = static_cast<S>(0.999);
  S eps = static_cast<S>(1e-8);
  long t = 0;
  VecX<S> m, v;

  explicit Adam(double learning_rate) : lr(static_cast<S>(learning_rate)) {}

  void step(VecX<S>& theta, const VecX<S>& grad) {
    if (m.size() == 0) {
      m = VecX<S>::Zero(theta.size());
      v = VecX<S>::Zero(theta.size());
    }
    if (m.size() != theta.size()) throw std::invalid_argument("adam: state size mismatch");
    ++t;
    m = beta1 * m + (S(1) - beta1) * grad;
    v = beta2 * v + (S(1) - beta2) * grad.cwiseProduct(grad);
    const S c1 = S(1) / static_cast<S>(1.0 - std::pow(static_cast<double>(beta1), t));
    const S c2 = S(1) / static_cast<S>(1.0 - std::pow(static_cast<double>(beta2), t));
    theta.array() -= lr * (m.array() * c1) / ((v.array() * c2).sqrt() + eps);
  }
};

/// Type-erased single interface used by the training loop.
template <typename S>
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr) : kind_(kind), sgd_(lr), adam_(lr) {}

  void step(VecX<S>& theta, const VecX<S>& grad) {
    if (kind_ == OptimizerKind::Sgd)
      sgd_.step(theta, grad);
    else
      adam_.step(theta, grad);
  }

  OptimizerKind kind() const { return kind_; }
  const Adam<S>& adam_state() const { return adam_; }
  Adam<S>& adam_state() { return adam_; }

 private:
  OptimizerKind kind_;
  Sgd<S> sgd_;
  Adam<S> adam_;
};

}  // namespace prach::nn
