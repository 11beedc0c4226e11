#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "prach/nn/parallel.hpp"
#include "prach/nn/tensor.hpp"
#include "prach/rng.hpp"

namespace prach::nn {

enum class LayerKind { Conv2d, BatchNorm, LeakyRelu, Relu, Dropout, Dense, Flatten, AddResidual, Softmax };

enum class Mode { Train, Eval };

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.9;  // running = m*running + (1-m)*batch
inline constexpr Eigen::Index kExamplesPerChunk = 16;

/// Trainable parameters (theta) and non-trainable state (BN running
/// statistics), stored flat so optimizer updates are single vector
/// expressions and checkpointing is a raw dump.
template <typename S>
struct ModelParams {
  VecX<S> theta;
  VecX<S> state;
  std::uint64_t init_seed = 0;
};

struct ParamEntry {
  std::string name;
  Eigen::Index offset = 0;
  Eigen::Index size = 0;
  std::vector<Eigen::Index> shape;
};

namespace detail {

struct LayerDesc {
  LayerKind kind{};
  // output geometry of this node
  bool spatial = false;
  Eigen::Index h = 0, w = 0, c = 0;  // spatial nodes
  Eigen::Index features = 0;         // flat nodes
  // conv
  int c_in = 0, c_out = 0, kh = 0, kw = 0, pad_top = 0, pad_left = 0;
  // dense
  int in = 0, out = 0;
  double p = 0.0;      // dropout probability
  double slope = 0.0;  // leaky relu negative slope
  int src = -1;        // residual source node index
  // parameter spans in theta (weight/gamma, bias/beta)
  Eigen::Index w_off = 0, w_size = 0, b_off = 0, b_size = 0;
  // BN running stats span in state: mean at s_off, var at s_off + c
  Eigen::Index s_off = 0;

  Eigen::Index rows_per_example() const { return spatial ? h * w : 1; }
  Eigen::Index cols() const { return spatial ? c : features; }
};

}  // namespace detail

template <typename S>
class Network;

/// Sequential graph construction with optional residual adds referencing
/// earlier node outputs by index. Geometry is tracked at build time so
/// shape errors surface before any data flows.
class NetworkBuilder {
 public:
  static NetworkBuilder spatial_input(Eigen::Index h, Eigen::Index w, Eigen::Index c) {
    NetworkBuilder b;
    b.in_spatial0_ = b.spatial_ = true;
    b.in_h0_ = b.h_ = h;
    b.in_w0_ = b.w_ = w;
    b.in_c0_ = b.c_ = c;
    return b;
  }
  static NetworkBuilder flat_input(Eigen::Index features) {
    NetworkBuilder b;
    b.in_spatial0_ = b.spatial_ = false;
    b.in_f0_ = b.f_ = features;
    return b;
  }

  /// Shape-preserving convolution; even kernel sizes pad (k-1)/2 before and
  /// the remainder after.
  int conv2d(int c_out, int kh, int kw) {
    require_spatial("conv2d");
    detail::LayerDesc d;
    d.kind = LayerKind::Conv2d;
    d.c_in = static_cast<int>(c_);
    d.c_out = c_out;
    d.kh = kh;
    d.kw = kw;
    d.pad_top = (kh - 1) / 2;
    d.pad_left = (kw - 1) / 2;
    c_ = c_out;
    return push(d);
  }
  int batch_norm() { return push({LayerKind::BatchNorm}); }
  int leaky_relu(double slope = 0.01) {
    detail::LayerDesc d;
    d.kind = LayerKind::LeakyRelu;
    d.slope = slope;
    return push(d);
  }
  int relu() { return push({LayerKind::Relu}); }
  int dropout(double p) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: probability out of range");
    detail::LayerDesc d;
    d.kind = LayerKind::Dropout;
    d.p = p;
    return push(d);
  }
  int flatten() {
    require_spatial("flatten");
    detail::LayerDesc d;
    d.kind = LayerKind::Flatten;
    spatial_ = false;
    f_ = h_ * w_ * c_;
    return push(d);
  }
  int dense(int out) {
    if (spatial_) throw std::invalid_argument("dense: flatten first");
    detail::LayerDesc d;
    d.kind = LayerKind::Dense;
    d.in = static_cast<int>(f_);
    d.out = out;
    f_ = out;
    return push(d);
  }
  int add_residual(int src_node) {
    if (src_node < 0 || src_node >= static_cast<int>(layers_.size()))
      throw std::invalid_argument("add_residual: bad source node");
    const auto& s = layers_[static_cast<std::size_t>(src_node)];
    const bool same = s.spatial == spatial_ && (spatial_ ? (s.h == h_ && s.w == w_ && s.c == c_)
                                                         : s.features == f_);
    if (!same) throw std::invalid_argument("add_residual: source shape mismatch");
    detail::LayerDesc d;
    d.kind = LayerKind::AddResidual;
    d.src = src_node;
    return push(d);
  }
  int softmax() {
    if (spatial_) throw std::invalid_argument("softmax: flatten first");
    return push({LayerKind::Softmax});
  }

 private:
  void require_spatial(const char* who) const {
    if (!spatial_) throw std::invalid_argument(std::string(who) + ": requires a spatial activation");
  }
  int push(detail::LayerDesc d) {
    d.spatial = spatial_;
    d.h = h_;
    d.w = w_;
    d.c = c_;
    d.features = f_;
    layers_.push_back(d);
    return static_cast<int>(layers_.size()) - 1;
  }

  bool in_spatial0_ = false, spatial_ = false;
  Eigen::Index in_h0_ = 0, in_w0_ = 0, in_c0_ = 0, in_f0_ = 0;
  Eigen::Index h_ = 0, w_ = 0, c_ = 0, f_ = 0;
  std::vector<detail::LayerDesc> layers_;

  template <typename>
  friend class Network;
};

/// Feed-forward graph. Spatial activations are (batch*h*w) x channels
/// matrices with w varying fastest; flat activations are batch x features.
/// Every batched reduction runs over a fixed example-aligned chunk grid
/// combined in index order, so results never depend on the thread count.
template <typename S>
class Network {
 public:
  struct Cache {
    MatX<S> input;
    std::vector<MatX<S>> act;   // node outputs
    std::vector<MatX<S>> aux;   // conv patch matrix / bn xhat / dropout mask
    std::vector<VecX<S>> auxv;  // bn inv-std
    Eigen::VectorXd lse;        // softmax log-sum-exp per row
    int batch = 0;
    Mode mode = Mode::Eval;
  };

  Network() = default;

  explicit Network(const NetworkBuilder& b) : layers_(b.layers_) {
    if (layers_.empty()) throw std::invalid_argument("network: empty graph");
    input_spatial_ = b.in_spatial0_;
    in_h_ = b.in_h0_;
    in_w_ = b.in_w0_;
    in_c_ = b.in_c0_;
    in_f_ = b.in_f0_;
    assign_spans();
  }

  Eigen::Index theta_size() const { return theta_size_; }
  Eigen::Index state_size() const { return state_size_; }
  const std::vector<ParamEntry>& param_entries() const { return param_entries_; }
  const std::vector<ParamEntry>& state_entries() const { return state_entries_; }
  bool input_is_spatial() const { return input_spatial_; }
  Eigen::Index input_rows_per_example() const { return input_spatial_ ? in_h_ * in_w_ : 1; }
  Eigen::Index input_cols() const { return input_spatial_ ? in_c_ : in_f_; }
  Eigen::Index n_out() const { return layers_.back().cols(); }

  ModelParams<S> init_params(std::uint64_t seed) const {
    ModelParams<S> p;
    p.init_seed = seed;
    p.theta = VecX<S>::Zero(theta_size_);
    p.state = VecX<S>::Zero(state_size_);
    Rng rng(seed);
    for (const auto& d : layers_) {
      switch (d.kind) {
        case LayerKind::Conv2d: {
          // fan-in scaled uniform, zero biases
          const double bound = std::sqrt(1.0 / (static_cast<double>(d.kh) * d.kw * d.c_in));
          for (Eigen::Index i = 0; i < d.w_size; ++i)
            p.theta[d.w_off + i] = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
          break;
        }
        case LayerKind::Dense: {
          const double bound = std::sqrt(1.0 / static_cast<double>(d.in));
          for (Eigen::Index i = 0; i < d.w_size; ++i)
            p.theta[d.w_off + i] = static_cast<S>((2.0 * rng.uniform() - 1.0) * bound);
          break;
        }
        case LayerKind::BatchNorm:
          p.theta.segment(d.w_off, d.w_size).setOnes();              // gamma
          p.state.segment(d.s_off + d.w_size, d.w_size).setOnes();   // running var
          break;
        default:
          break;
      }
    }
    return p;
  }

  /// Runs the graph. Train mode uses batch statistics, draws dropout masks
  /// from dropout_rng and updates BN running stats; eval mode is
  /// deterministic and consumes no randomness.
  const MatX<S>& forward(ModelParams<S>& params, const MatX<S>& x0, Mode mode, Rng* dropout_rng,
                         Cache& cache) const {
    if (x0.cols() != input_cols()) throw std::invalid_argument("network: input width mismatch");
    if (x0.rows() <= 0 || x0.rows() % input_rows_per_example() != 0)
      throw std::invalid_argument("network: input rows not a whole number of examples");
    cache.batch = static_cast<int>(x0.rows() / input_rows_per_example());
    cache.mode = mode;
    cache.input = x0;
    cache.act.resize(layers_.size());
    cache.aux.resize(layers_.size());
    cache.auxv.resize(layers_.size());
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const MatX<S>& in = i == 0 ? cache.input : cache.act[i - 1];
      forward_node(static_cast<int>(i), params, in, mode, dropout_rng, cache);
    }
    return cache.act.back();
  }

  /// Eval-mode forward over immutable parameters (eval never touches BN
  /// running state, so the cast is sound).
  const MatX<S>& forward_eval(const ModelParams<S>& params, const MatX<S>& x0, Cache& cache) const {
    return forward(const_cast<ModelParams<S>&>(params), x0, Mode::Eval, nullptr, cache);
  }

  /// Mean categorical cross-entropy of the cached forward pass, computed
  /// from logits via log-sum-exp (never from possibly-underflowed probs).
  double loss(const Cache& cache, const std::vector<int>& targets) const {
    check_softmax_tail();
    const MatX<S>& logits = layers_.size() == 1 ? cache.input : cache.act[layers_.size() - 2];
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
      throw std::invalid_argument("loss: target count mismatch");
    double acc = 0.0;
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const int t = targets[static_cast<std::size_t>(r)];
      if (t < 0 || t >= logits.cols()) throw std::invalid_argument("loss: target out of range");
      acc += cache.lse[r] - static_cast<double>(logits(r, t));
    }
    return acc / static_cast<double>(logits.rows());
  }

  /// Reverse pass over a cached train-mode forward; fills d(loss)/d(theta).
  void backward(const ModelParams<S>& params, Cache& cache, const std::vector<int>& targets,
                VecX<S>& grad) const {
    check_softmax_tail();
    if (cache.mode != Mode::Train) throw std::logic_error("backward: requires a train-mode forward");
    grad = VecX<S>::Zero(theta_size_);
    const Eigen::Index b = cache.act.back().rows();
    // softmax + cross-entropy head: d(loss)/d(logits) = (probs - onehot)/batch
    MatX<S> g = cache.act.back();
    for (Eigen::Index r = 0; r < b; ++r) g(r, targets[static_cast<std::size_t>(r)]) -= S(1);
    g *= static_cast<S>(1.0 / static_cast<double>(b));

    std::vector<MatX<S>> extra(layers_.size());
    for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
      auto& pending = extra[static_cast<std::size_t>(i)];
      if (pending.size() > 0) g += pending;
      if (layers_[static_cast<std::size_t>(i)].kind == LayerKind::Softmax) continue;
      const MatX<S>& in = i == 0 ? cache.input : cache.act[static_cast<std::size_t>(i) - 1];
      backward_node(i, params, in, g, grad, extra, cache);
    }
  }

  static std::vector<int> argmax_rows(const MatX<S>& probs) {
    std::vector<int> out(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      Eigen::Index j = 0;
      probs.row(r).maxCoeff(&j);
      out[static_cast<std::size_t>(r)] = static_cast<int>(j);
    }
    return out;
  }

 private:
  void check_softmax_tail() const {
    if (layers_.back().kind != LayerKind::Softmax)
      throw std::logic_error("network: loss/backward require a softmax output");
  }

  void assign_spans() {
    theta_size_ = 0;
    state_size_ = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      auto& d = layers_[i];
      const std::string tag = "n" + std::to_string(i);
      switch (d.kind) {
        case LayerKind::Conv2d: {
          d.w_size = static_cast<Eigen::Index>(d.kh) * d.kw * d.c_in * d.c_out;
          d.b_size = d.c_out;
          d.w_off = theta_size_;
          d.b_off = theta_size_ + d.w_size;
          theta_size_ += d.w_size + d.b_size;
          param_entries_.push_back({tag + ".conv.weight", d.w_off, d.w_size,
                                    {d.kh, d.kw, d.c_in, d.c_out}});
          param_entries_.push_back({tag + ".conv.bias", d.b_off, d.b_size, {d.c_out}});
          break;
        }
        case LayerKind::Dense: {
          d.w_size = static_cast<Eigen::Index>(d.out) * d.in;
          d.b_size = d.out;
          d.w_off = theta_size_;
          d.b_off = theta_size_ + d.w_size;
          theta_size_ += d.w_size + d.b_size;
          param_entries_.push_back({tag + ".dense.weight", d.w_off, d.w_size, {d.out, d.in}});
          param_entries_.push_back({tag + ".dense.bias", d.b_off, d.b_size, {d.out}});
          break;
        }
        case LayerKind::BatchNorm: {
          const Eigen::Index c = d.cols();
          d.w_size = c;
          d.b_size = c;
          d.w_off = theta_size_;
          d.b_off = theta_size_ + c;
          theta_size_ += 2 * c;
          d.s_off = state_size_;
          state_size_ += 2 * c;
          param_entries_.push_back({tag + ".bn.gamma", d.w_off, c, {c}});
          param_entries_.push_back({tag + ".bn.beta", d.b_off, c, {c}});
          state_entries_.push_back({tag + ".bn.running_mean", d.s_off, c, {c}});
          state_entries_.push_back({tag + ".bn.running_var", d.s_off + c, c, {c}});
          break;
        }
        default:
          break;
      }
    }
  }

  // ---- per-node forward ----

  void forward_node(int i, ModelParams<S>& params, const MatX<S>& in, Mode mode, Rng* rng,
                    Cache& cache) const {
    const auto& d = layers_[static_cast<std::size_t>(i)];
    MatX<S>& out = cache.act[static_cast<std::size_t>(i)];
    switch (d.kind) {
      case LayerKind::Conv2d:
        conv_forward(d, in, params.theta, cache.aux[static_cast<std::size_t>(i)], out);
        break;
      case LayerKind::BatchNorm:
        bn_forward(d, in, params, mode, cache.aux[static_cast<std::size_t>(i)],
                   cache.auxv[static_cast<std::size_t>(i)], out);
        break;
      case LayerKind::LeakyRelu:
      case LayerKind::Relu: {
        const S slope = static_cast<S>(d.kind == LayerKind::Relu ? 0.0 : d.slope);
        out.resize(in.rows(), in.cols());
        elementwise(in.rows(), [&](Eigen::Index b, Eigen::Index e) {
          out.middleRows(b, e - b) =
              in.middleRows(b, e - b).unaryExpr([slope](S x) { return x > S(0) ? x : slope * x; });
        });
        break;
      }
      case LayerKind::Dropout: {
        if (mode == Mode::Eval || d.p == 0.0) {
          out = in;
          break;
        }
        if (rng == nullptr) throw std::logic_error("dropout: train mode needs an rng");
        MatX<S>& mask = cache.aux[static_cast<std::size_t>(i)];
        mask.resize(in.rows(), in.cols());
        const double keep = 1.0 - d.p;
        const S scale = static_cast<S>(1.0 / keep);
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
          for (Eigen::Index r = 0; r < mask.rows(); ++r)
            mask(r, c) = rng->uniform() >= d.p ? scale : S(0);
        out = in.cwiseProduct(mask);
        break;
      }
      case LayerKind::Dense: {
        Eigen::Map<const MatX<S>> w(params.theta.data() + d.w_off, d.out, d.in);
        Eigen::Map<const VecX<S>> b(params.theta.data() + d.b_off, d.out);
        out.noalias() = in * w.transpose();
        out.rowwise() += b.transpose();
        break;
      }
      case LayerKind::Flatten: {
        const Eigen::Index rpe = d.h * d.w;  // pre-flatten spatial rows
        const Eigen::Index c = in.cols();
        const Eigen::Index batch = in.rows() / rpe;
        out.resize(batch, rpe * c);
        parallel_chunks(batch, kExamplesPerChunk, [&](Eigen::Index e0, Eigen::Index e1, Eigen::Index) {
          for (Eigen::Index e = e0; e < e1; ++e)
            for (Eigen::Index s = 0; s < rpe; ++s)
              for (Eigen::Index ch = 0; ch < c; ++ch)
                out(e, s * c + ch) = in(e * rpe + s, ch);
        });
        break;
      }
      case LayerKind::AddResidual:
        out = in + cache.act[static_cast<std::size_t>(d.src)];
        break;
      case LayerKind::Softmax: {
        out.resize(in.rows(), in.cols());
        cache.lse.resize(in.rows());
        for (Eigen::Index r = 0; r < in.rows(); ++r) {
          const S m = in.row(r).maxCoeff();
          Eigen::Array<S, 1, Eigen::Dynamic> e = (in.row(r).array() - m).exp();
          const double sum = static_cast<double>(e.sum());
          out.row(r) = (e / static_cast<S>(sum)).matrix();
          cache.lse[r] = static_cast<double>(m) + std::log(sum);
        }
        break;
      }
    }
  }

  // ---- per-node backward; g holds d(loss)/d(node output) on entry and
  // d(loss)/d(node input) on exit ----

  void backward_node(int i, const ModelParams<S>& params, const MatX<S>& in, MatX<S>& g,
                     VecX<S>& grad, std::vector<MatX<S>>& extra, Cache& cache) const {
    const auto& d = layers_[static_cast<std::size_t>(i)];
    switch (d.kind) {
      case LayerKind::Conv2d:
        conv_backward(d, in, g, params.theta, grad, cache.aux[static_cast<std::size_t>(i)]);
        break;
      case LayerKind::BatchNorm:
        bn_backward(d, g, params.theta, grad, cache.aux[static_cast<std::size_t>(i)],
                    cache.auxv[static_cast<std::size_t>(i)]);
        break;
      case LayerKind::LeakyRelu:
      case LayerKind::Relu: {
        const S slope = static_cast<S>(d.kind == LayerKind::Relu ? 0.0 : d.slope);
        elementwise(g.rows(), [&](Eigen::Index b, Eigen::Index e) {
          g.middleRows(b, e - b) = g.middleRows(b, e - b).cwiseProduct(in.middleRows(b, e - b)
              .unaryExpr([slope](S x) { return x > S(0) ? S(1) : slope; }));
        });
        break;
      }
      case LayerKind::Dropout:
        if (cache.aux[static_cast<std::size_t>(i)].size() > 0)
          g = g.cwiseProduct(cache.aux[static_cast<std::size_t>(i)]);
        break;
      case LayerKind::Dense: {
        Eigen::Map<const MatX<S>> w(params.theta.data() + d.w_off, d.out, d.in);
        Eigen::Map<MatX<S>> dw(grad.data() + d.w_off, d.out, d.in);
        Eigen::Map<VecX<S>> db(grad.data() + d.b_off, d.out);
        dw.noalias() = g.transpose() * in;
        db = g.colwise().sum();
        MatX<S> gi;
        gi.noalias() = g * w;
        g.swap(gi);
        break;
      }
      case LayerKind::Flatten: {
        const Eigen::Index rpe = d.h * d.w;
        const Eigen::Index c = d.c;
        const Eigen::Index batch = g.rows();
        MatX<S> gi(batch * rpe, c);
        parallel_chunks(batch, kExamplesPerChunk, [&](Eigen::Index e0, Eigen::Index e1, Eigen::Index) {
          for (Eigen::Index e = e0; e < e1; ++e)
            for (Eigen::Index s = 0; s < rpe; ++s)
              for (Eigen::Index ch = 0; ch < c; ++ch)
                gi(e * rpe + s, ch) = g(e, s * c + ch);
        });
        g.swap(gi);
        break;
      }
      case LayerKind::AddResidual: {
        auto& pending = extra[static_cast<std::size_t>(d.src)];
        if (pending.size() > 0)
          pending += g;
        else
          pending = g;
        break;  // g passes through to the chain predecessor unchanged
      }
      case LayerKind::Softmax:
        break;  // folded into the cross-entropy head
    }
  }

  // ---- conv via im2col + GEMM ----

  void conv_forward(const detail::LayerDesc& d, const MatX<S>& in, const VecX<S>& theta,
                    MatX<S>& patches, MatX<S>& out) const {
    const Eigen::Index rpe = d.h * d.w;
    const Eigen::Index rows = in.rows();
    const Eigen::Index batch = rows / rpe;
    patches.resize(rows, static_cast<Eigen::Index>(d.kh) * d.kw * d.c_in);
    im2col(d, in, patches, batch);
    Eigen::Map<const MatX<S>> k(theta.data() + d.w_off,
                                static_cast<Eigen::Index>(d.kh) * d.kw * d.c_in, d.c_out);
    Eigen::Map<const VecX<S>> bias(theta.data() + d.b_off, d.c_out);
    out.resize(rows, d.c_out);
    parallel_chunks(batch, kExamplesPerChunk, [&](Eigen::Index e0, Eigen::Index e1, Eigen::Index) {
      const Eigen::Index b = e0 * rpe, n = (e1 - e0) * rpe;
      out.middleRows(b, n).noalias() = patches.middleRows(b, n) * k;
      out.middleRows(b, n).rowwise() += bias.transpose();
    });
  }

  void conv_backward(const detail::LayerDesc& d, const MatX<S>& in, MatX<S>& g,
                     const VecX<S>& theta, VecX<S>& grad, MatX<S>& patches) const {
    const Eigen::Index rpe = d.h * d.w;
    const Eigen::Index rows = in.rows();
    const Eigen::Index batch = rows / rpe;
    const Eigen::Index kdim = static_cast<Eigen::Index>(d.kh) * d.kw * d.c_in;
    Eigen::Map<const MatX<S>> k(theta.data() + d.w_off, kdim, d.c_out);
    Eigen::Map<MatX<S>> dk(grad.data() + d.w_off, kdim, d.c_out);
    Eigen::Map<VecX<S>> db(grad.data() + d.b_off, d.c_out);
    db = g.colwise().sum();
    // weight gradient: fixed-chunk partials combined in chunk order
    const Eigen::Index nchunks = num_chunks(batch, kExamplesPerChunk);
    std::vector<MatX<S>> parts(static_cast<std::size_t>(nchunks));
    parallel_chunks(batch, kExamplesPerChunk, [&](Eigen::Index e0, Eigen::Index e1, Eigen::Index ci) {
      const Eigen::Index b = e0 * rpe, n = (e1 - e0) * rpe;
      parts[static_cast<std::size_t>(ci)].noalias() =
          patches.middleRows(b, n).transpose() * g.middleRows(b, n);
    });
    dk.setZero();
    for (const auto& p : parts) dk += p;
    // input gradient: dPatches = g * K^T, then fold patches back (patches
    // buffer is dead after dk, reuse it)
    parallel_chunks(batch, kExamplesPerChunk, [&](Eigen::Index e0, Eigen::Index e1, Eigen::Index) {
      const Eigen::Index b = e0 * rpe, n = (e1 - e0) * rpe;
      patches.middleRows(b, n) = g.middleRows(b, n) * k.transpose();
    });
    MatX<S> gi = MatX<S>::Zero(rows, d.c_in);
    col2im(d, patches, gi, batch);
    g.swap(gi);
  }

  void im2col(const detail::LayerDesc& d, const MatX<S>& in, MatX<S>& patches,
              Eigen::Index batch) const {
    const Eigen::Index h = d.h, w = d.w, rpe = h * w;
    parallel_chunks(batch, kExamplesPerChunk, [&](Eigen::Index e0, Eigen::Index e1, Eigen::Index) {
      for (int dh = 0; dh < d.kh; ++dh) {
        for (int dw = 0; dw < d.kw; ++dw) {
          const Eigen::Index hoff = dh - d.pad_top, woff = dw - d.pad_left;
          const Eigen::Index h0 = std::max<Eigen::Index>(0, -hoff);
          const Eigen::Index h1 = std::min<Eigen::Index>(h, h - hoff);
          const Eigen::Index w0 = std::max<Eigen::Index>(0, -woff);
          const Eigen::Index w1 = std::min<Eigen::Index>(w, w - woff);
          for (int c = 0; c < d.c_in; ++c) {
            const Eigen::Index col = (static_cast<Eigen::Index>(dh) * d.kw + dw) * d.c_in + c;
            for (Eigen::Index e = e0; e < e1; ++e) {
              const Eigen::Index base = e * rpe;
              if (woff == 0) {
                // whole-width rows shift contiguously
                if (h0 > 0) patches.col(col).segment(base, h0 * w).setZero();
                if (h1 < h) patches.col(col).segment(base + h1 * w, (h - h1) * w).setZero();
                if (h1 > h0)
                  patches.col(col).segment(base + h0 * w, (h1 - h0) * w) =
                      in.col(c).segment(base + (h0 + hoff) * w, (h1 - h0) * w);
              } else {
                patches.col(col).segment(base, rpe).setZero();
                for (Eigen::Index hh = h0; hh < h1; ++hh)
                  for (Eigen::Index ww = w0; ww < w1; ++ww)
                    patches(base + hh * w + ww, col) = in(base + (hh + hoff) * w + ww + woff, c);
              }
            }
          }
        }
      }
    });
  }

  void col2im(const detail::LayerDesc& d, const MatX<S>& dpatches, MatX<S>& din,
              Eigen::Index batch) const {
    const Eigen::Index h = d.h, w = d.w, rpe = h * w;
    parallel_chunks(batch, kExamplesPerChunk, [&](Eigen::Index e0, Eigen::Index e1, Eigen::Index) {
      for (int dh = 0; dh < d.kh; ++dh) {
        for (int dw = 0; dw < d.kw; ++dw) {
          const Eigen::Index hoff = dh - d.pad_top, woff = dw - d.pad_left;
          const Eigen::Index h0 = std::max<Eigen::Index>(0, -hoff);
          const Eigen::Index h1 = std::min<Eigen::Index>(h, h - hoff);
          const Eigen::Index w0 = std::max<Eigen::Index>(0, -woff);
          const Eigen::Index w1 = std::min<Eigen::Index>(w, w - woff);
          for (int c = 0; c < d.c_in; ++c) {
            const Eigen::Index col = (static_cast<Eigen::Index>(dh) * d.kw + dw) * d.c_in + c;
            for (Eigen::Index e = e0; e < e1; ++e) {
              const Eigen::Index base = e * rpe;
              if (woff == 0) {
                if (h1 > h0)
                  din.col(c).segment(base + (h0 + hoff) * w, (h1 - h0) * w) +=
                      dpatches.col(col).segment(base + h0 * w, (h1 - h0) * w);
              } else {
                for (Eigen::Index hh = h0; hh < h1; ++hh)
                  for (Eigen::Index ww = w0; ww < w1; ++ww)
                    din(base + (hh + hoff) * w + ww + woff, c) += dpatches(base + hh * w + ww, col);
              }
            }
          }
        }
      }
    });
  }

  // ---- batch norm ----

  void bn_forward(const detail::LayerDesc& d, const MatX<S>& in, ModelParams<S>& params, Mode mode,
                  MatX<S>& xhat, VecX<S>& invstd, MatX<S>& out) const {
    const Eigen::Index c = d.cols();
    Eigen::Map<const VecX<S>> gamma(params.theta.data() + d.w_off, c);
    Eigen::Map<const VecX<S>> beta(params.theta.data() + d.b_off, c);
    out.resize(in.rows(), c);
    if (mode == Mode::Eval) {
      Eigen::Map<const VecX<S>> rmean(params.state.data() + d.s_off, c);
      Eigen::Map<const VecX<S>> rvar(params.state.data() + d.s_off + c, c);
      VecX<S> scale(c), shift(c);
      for (Eigen::Index j = 0; j < c; ++j) {
        const double is = 1.0 / std::sqrt(static_cast<double>(rvar[j]) + kBnEps);
        scale[j] = static_cast<S>(is) * gamma[j];
        shift[j] = beta[j] - scale[j] * rmean[j];
      }
      elementwise(in.rows(), [&](Eigen::Index b, Eigen::Index e) {
        out.middleRows(b, e - b) =
            ((in.middleRows(b, e - b).array().rowwise() * scale.transpose().array()).rowwise() +
             shift.transpose().array())
                .matrix();
      });
      return;
    }
    // batch statistics via fixed-chunk partial sums, combined in order
    const Eigen::Index rows = in.rows();
    const Eigen::Index rpe = d.rows_per_example();
    const Eigen::Index batch = rows / rpe;
    const Eigen::Index nchunks = num_chunks(batch, kExamplesPerChunk);
    std::vector<Eigen::VectorXd> psum(static_cast<std::size_t>(nchunks)),
        psq(static_cast<std::size_t>(nchunks));
    parallel_chunks(batch, kExamplesPerChunk, [&](Eigen::Index e0, Eigen::Index e1, Eigen::Index ci) {
      const Eigen::Index b = e0 * rpe, n = (e1 - e0) * rpe;
      psum[static_cast<std::size_t>(ci)] =
          in.middleRows(b, n).colwise().sum().transpose().template cast<double>();
      psq[static_cast<std::size_t>(ci)] = in.middleRows(b, n)
                                              .array()
                                              .square()
                                              .matrix()
                                              .colwise()
                                              .sum()
                                              .transpose()
                                              .template cast<double>();
    });
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(c), sq = Eigen::VectorXd::Zero(c);
    for (Eigen::Index ci = 0; ci < nchunks; ++ci) {
      sum += psum[static_cast<std::size_t>(ci)];
      sq += psq[static_cast<std::size_t>(ci)];
    }
    const double n = static_cast<double>(rows);
    VecX<S> mean(c);
    invstd.resize(c);
    VecX<S> batch_var(c);
    for (Eigen::Index j = 0; j < c; ++j) {
      const double mu = sum[j] / n;
      const double var = std::max(0.0, sq[j] / n - mu * mu);
      mean[j] = static_cast<S>(mu);
      batch_var[j] = static_cast<S>(var);
      invstd[j] = static_cast<S>(1.0 / std::sqrt(var + kBnEps));
    }
    xhat.resize(rows, c);
    elementwise(rows, [&](Eigen::Index b, Eigen::Index e) {
      xhat.middleRows(b, e - b) =
          ((in.middleRows(b, e - b).rowwise() - mean.transpose()).array().rowwise() *
           invstd.transpose().array())
              .matrix();
      out.middleRows(b, e - b) =
          ((xhat.middleRows(b, e - b).array().rowwise() * gamma.transpose().array()).rowwise() +
           beta.transpose().array())
              .matrix();
    });
    // running statistics
    Eigen::Map<VecX<S>> rmean(params.state.data() + d.s_off, c);
    Eigen::Map<VecX<S>> rvar(params.state.data() + d.s_off + c, c);
    rmean = static_cast<S>(kBnMomentum) * rmean + static_cast<S>(1.0 - kBnMomentum) * mean;
    rvar = static_cast<S>(kBnMomentum) * rvar + static_cast<S>(1.0 - kBnMomentum) * batch_var;
  }

  void bn_backward(const detail::LayerDesc& d, MatX<S>& g, const VecX<S>& theta, VecX<S>& grad,
                   const MatX<S>& xhat, const VecX<S>& invstd) const {
    if (xhat.size() == 0) throw std::logic_error("bn backward: missing train-mode cache");
    const Eigen::Index c = d.cols();
    const Eigen::Index rows = g.rows();
    Eigen::Map<const VecX<S>> gamma(theta.data() + d.w_off, c);
    Eigen::Map<VecX<S>> dgamma(grad.data() + d.w_off, c);
    Eigen::Map<VecX<S>> dbeta(grad.data() + d.b_off, c);
    const Eigen::Index rpe = d.rows_per_example();
    const Eigen::Index batch = rows / rpe;
    const Eigen::Index nchunks = num_chunks(batch, kExamplesPerChunk);
    std::vector<Eigen::VectorXd> pdb(static_cast<std::size_t>(nchunks)),
        pdg(static_cast<std::size_t>(nchunks));
    parallel_chunks(batch, kExamplesPerChunk, [&](Eigen::Index e0, Eigen::Index e1, Eigen::Index ci) {
      const Eigen::Index b = e0 * rpe, n = (e1 - e0) * rpe;
      pdb[static_cast<std::size_t>(ci)] =
          g.middleRows(b, n).colwise().sum().transpose().template cast<double>();
      pdg[static_cast<std::size_t>(ci)] = g.middleRows(b, n)
                                              .cwiseProduct(xhat.middleRows(b, n))
                                              .colwise()
                                              .sum()
                                              .transpose()
                                              .template cast<double>();
    });
    Eigen::VectorXd sdb = Eigen::VectorXd::Zero(c), sdg = Eigen::VectorXd::Zero(c);
    for (Eigen::Index ci = 0; ci < nchunks; ++ci) {
      sdb += pdb[static_cast<std::size_t>(ci)];
      sdg += pdg[static_cast<std::size_t>(ci)];
    }
    dbeta = sdb.cast<S>();
    dgamma = sdg.cast<S>();
    const double n = static_cast<double>(rows);
    // dx = gamma*invstd * (g - mean(g) - xhat*mean(g*xhat)), means over rows
    VecX<S> k1(c), k2(c), k3(c);
    for (Eigen::Index j = 0; j < c; ++j) {
      k1[j] = gamma[j] * invstd[j];
      k2[j] = static_cast<S>(sdb[j] / n);
      k3[j] = static_cast<S>(sdg[j] / n);
    }
    elementwise(rows, [&](Eigen::Index b, Eigen::Index e) {
      g.middleRows(b, e - b) =
          ((((g.middleRows(b, e - b).array().rowwise() - k2.transpose().array()) -
             (xhat.middleRows(b, e - b).array().rowwise() * k3.transpose().array()))
                .rowwise() *
            k1.transpose().array()))
              .matrix();
    });
  }

  template <typename F>
  void elementwise(Eigen::Index rows, F&& f) const {
    constexpr Eigen::Index kRowChunk = 8192;
    if (rows <= kRowChunk) {
      f(Eigen::Index(0), rows);
      return;
    }
    parallel_chunks(rows, kRowChunk, [&](Eigen::Index b, Eigen::Index e, Eigen::Index) { f(b, e); });
  }

  std::vector<detail::LayerDesc> layers_;
  bool input_spatial_ = false;
  Eigen::Index in_h_ = 0, in_w_ = 0, in_c_ = 0, in_f_ = 0;
  Eigen::Index theta_size_ = 0, state_size_ = 0;
  std::vector<ParamEntry> param_entries_;
  std::vector<ParamEntry> state_entries_;
};

}  // namespace prach::nn
