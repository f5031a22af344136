// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dryflow/error.hpp"
#include "dryflow/rng.hpp"
#include "dryflow/tensor.hpp"

namespace dryflow::flow {

// Linear conditional probability path between Gaussian noise x0 (t = 0)
// and data x1 (t = 1).

inline double sample_time(Rng& rng) { return rng.uniform(); }

namespace detail {
template <class T>
void check_pair(const Matrix<T>& x0, const Matrix<T>& x1, const char* op) {
  require(x0.rows() == x1.rows() && x0.cols() == x1.cols(), ErrorKind::data, op, ": shape mismatch ", x0.rows(),
          "x", x0.cols(), " vs ", x1.rows(), "x", x1.cols());
}
}  // namespace detail

template <class T>
Matrix<T> interpolate(const Matrix<T>& x0, const Matrix<T>& x1, double t) {
  detail::check_pair(x0, x1, "interpolate");
  require(t >= 0.0 && t <= 1.0, ErrorKind::data, "interpolate: t = ", t, " outside [0, 1]");
  if (t == 0.0) return x0;
  if (t == 1.0) return x1;
  return (static_cast<T>(1.0 - t) * x0 + static_cast<T>(t) * x1).eval();
}

template <class T>
Matrix<T> velocity_target(const Matrix<T>& x0, const Matrix<T>& x1) {
  detail::check_pair(x0, x1, "velocity_target");
  return (x1 - x0).eval();
}

template <class T>
Matrix<T> gaussian_like(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal());
  return m;
}

}  // namespace dryflow::flow
