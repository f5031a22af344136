// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

namespace dryflow {

/// Row-major dense matrix; rows are time frames throughout the library.
template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using MatrixD = Matrix<double>;
using MatrixF = Matrix<float>;

}  // namespace dryflow
