#pragma once

#include <Eigen/Dense>

#include <numeric>
#include <stdexcept>
#include <vector>

namespace prach::nn {

template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// n-dimensional real array: shape metadata over flat storage.
template <typename S>
struct Tensor {
  std::vector<Eigen::Index> shape;
  VecX<S> data;

  static Tensor zeros(std::vector<Eigen::Index> shp) {
    Tensor t;
    t.shape = std::move(shp);
    t.data = VecX<S>::Zero(size_of(t.shape));
    return t;
  }

  static Eigen::Index size_of(const std::vector<Eigen::Index>& shp) {
    Eigen::Index n = 1;
    for (auto d : shp) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  Eigen::Index size() const { return data.size(); }

  void check() const {
    if (size_of(shape) != data.size()) throw std::logic_error("tensor: shape/data mismatch");
  }
};

}  // namespace prach::nn
