#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>

#include "freeml/common.hpp"

namespace freeml {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Visitor over named parameter tensors in canonical (checkpoint) order.
template <class T>
using TensorVisitor = std::function<void(const std::string& name, T* data, std::size_t size)>;

template <class T>
void fill_uniform(Rng& rng, T* p, std::size_t n, double scale) {
  for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<T>(rng.uniform(-scale, scale));
}

// Zero-mean uniform with scale 1/sqrt(fan_in).
template <class T, class Derived>
void init_fan_in(Rng& rng, Eigen::MatrixBase<Derived>& m, Eigen::Index fan_in) {
  double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      m(r, c) = static_cast<T>(rng.uniform(-scale, scale));
    }
  }
}

}  // namespace freeml
