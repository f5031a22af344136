// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "dryflow/error.hpp"
#include "dryflow/nn/params.hpp"
#include "dryflow/tensor.hpp"

namespace dryflow::nn {

template <class T>
class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Matrix<T>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode recorder over dense matrices. Nodes are appended in
/// evaluation order, so a reverse sweep is a valid topological order.
template <class T>
class Tape {
 public:
  using Mat = Matrix<T>;
  /// Receives the node's value and dL/d(value); scatters into the inputs.
  using Backward = std::function<void(const Mat&, const Mat&)>;

  Tape() { nodes_.reserve(512); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Mat value) { return push(std::move(value), false, {}); }

  /// Leaf that receives a gradient (e.g. a model input under test).
  Var<T> input(Mat value) { return push(std::move(value), true, {}); }

  /// Leaf bound to parameter `index` of `store`; repeated calls share a node.
  Var<T> param(const ParamStore<T>& store, std::size_t index) {
    auto key = std::make_pair(&store, index);
    auto it = params_.find(key);
    if (it != params_.end()) return Var<T>{this, it->second};
    const Var<T> v = push(store.value(index), track_params_, {});
    params_.emplace(key, v.id);
    return v;
  }

  Var<T> param(const ParamStore<T>& store, const std::string& name) { return param(store, store.index(name)); }

  /// When false, parameters are leaves without gradient (evaluation mode).
  void track_params(bool on) { track_params_ = on; }

  const Mat& value(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  bool requires_grad(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }

  /// Gradient accumulated at `v` by the last backward(); empty if none.
  const Mat& grad(Var<T> v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }

  void backward(Var<T> loss) {
    require(value(loss).size() == 1, ErrorKind::numeric, "backward needs a scalar loss");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[static_cast<std::size_t>(loss.id)].grad = Mat::Ones(1, 1);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.requires_grad && n.backward && n.grad.size() > 0) n.backward(n.value, n.grad);
    }
  }

  /// Adds the parameter gradients of `store` into `out`.
  void accumulate(const ParamStore<T>& store, Gradients<T>& out) const {
    for (const auto& [key, id] : params_) {
      if (key.first != &store) continue;
      const Mat& g = nodes_[static_cast<std::size_t>(id)].grad;
      if (g.size() > 0) out.values[key.second] += g;
    }
  }

  // Op plumbing -----------------------------------------------------------

  Var<T> push(Mat value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Mat(), requires_grad, std::move(backward)});
    return Var<T>{this, static_cast<int>(nodes_.size() - 1)};
  }

  /// grad(v) += g, allocating on first touch. No-op for non-tracked nodes.
  template <class Expr>
  void add_grad(Var<T> v, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::map<std::pair<const ParamStore<T>*, std::size_t>, int> params_;
  bool track_params_ = true;
};

namespace detail {
template <class T>
bool any_grad(std::initializer_list<Var<T>> vs) {
  for (auto v : vs)
    if (v.tape->requires_grad(v)) return true;
  return false;
}

template <class T>
void same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::data, op, ": shape mismatch ", a.rows(),
          "x", a.cols(), " vs ", b.rows(), "x", b.cols());
}
}  // namespace detail

// Every op records y = f(inputs) plus a closure mapping (y, dL/dy) onto the
// inputs' gradients.

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require(a.cols() == b.rows(), ErrorKind::data, "matmul: inner dims ", a.cols(), " vs ", b.rows());
  Tape<T>* tp = a.tape;
  Matrix<T> y = a.value() * b.value();
  const bool rg = detail::any_grad({a, b});
  return tp->push(std::move(y), rg, [tp, a, b](const Matrix<T>& out, const Matrix<T>& g) {
    if (tp->requires_grad(a)) tp->add_grad(a, g * b.value().transpose());
    if (tp->requires_grad(b)) tp->add_grad(b, a.value().transpose() * g);
  });
}

/// a * b^T
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  require(a.cols() == b.cols(), ErrorKind::data, "matmul_nt: inner dims ", a.cols(), " vs ", b.cols());
  Tape<T>* tp = a.tape;
  Matrix<T> y = a.value() * b.value().transpose();
  return tp->push(std::move(y), detail::any_grad({a, b}), [tp, a, b](const Matrix<T>& out, const Matrix<T>& g) {
    if (tp->requires_grad(a)) tp->add_grad(a, g * b.value());
    if (tp->requires_grad(b)) tp->add_grad(b, g.transpose() * a.value());
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "add");
  Tape<T>* tp = a.tape;
  return tp->push(a.value() + b.value(), detail::any_grad({a, b}), [tp, a, b](const Matrix<T>& out, const Matrix<T>& g) {
    tp->add_grad(a, g);
    tp->add_grad(b, g);
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "sub");
  Tape<T>* tp = a.tape;
  return tp->push(a.value() - b.value(), detail::any_grad({a, b}), [tp, a, b](const Matrix<T>& out, const Matrix<T>& g) {
    tp->add_grad(a, g);
    tp->add_grad(b, -g);
  });
}

/// Elementwise product.
template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  detail::same_shape(a, b, "mul");
  Tape<T>* tp = a.tape;
  return tp->push(a.value().cwiseProduct(b.value()), detail::any_grad({a, b}), [tp, a, b](const Matrix<T>& out, const Matrix<T>& g) {
    if (tp->requires_grad(a)) tp->add_grad(a, g.cwiseProduct(b.value()));
    if (tp->requires_grad(b)) tp->add_grad(b, g.cwiseProduct(a.value()));
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tape<T>* tp = a.tape;
  return tp->push(a.value() * s, detail::any_grad({a}), [tp, a, s](const Matrix<T>& out, const Matrix<T>& g) {
    tp->add_grad(a, g * s);
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  Tape<T>* tp = a.tape;
  return tp->push((a.value().array() + s).matrix(), detail::any_grad({a}),
                        [tp, a](const Matrix<T>& out, const Matrix<T>& g) { tp->add_grad(a, g); });
}

/// a + r with the 1 x C row r broadcast over rows.
template <class T>
Var<T> add_row(Var<T> a, Var<T> r) {
  require(r.rows() == 1 && r.cols() == a.cols(), ErrorKind::data, "add_row: row shape mismatch");
  Tape<T>* tp = a.tape;
  Matrix<T> y = a.value().rowwise() + r.value().row(0);
  return tp->push(std::move(y), detail::any_grad({a, r}), [tp, a, r](const Matrix<T>& out, const Matrix<T>& g) {
    tp->add_grad(a, g);
    if (tp->requires_grad(r)) tp->add_grad(r, g.colwise().sum());
  });
}

/// a * r (elementwise per column) with the 1 x C row r broadcast over rows.
template <class T>
Var<T> mul_row(Var<T> a, Var<T> r) {
  require(r.rows() == 1 && r.cols() == a.cols(), ErrorKind::data, "mul_row: row shape mismatch");
  Tape<T>* tp = a.tape;
  Matrix<T> y = (a.value().array().rowwise() * r.value().row(0).array()).matrix();
  return tp->push(std::move(y), detail::any_grad({a, r}), [tp, a, r](const Matrix<T>& out, const Matrix<T>& g) {
    if (tp->requires_grad(a)) tp->add_grad(a, (g.array().rowwise() * r.value().row(0).array()).matrix());
    if (tp->requires_grad(r)) tp->add_grad(r, g.cwiseProduct(a.value()).colwise().sum());
  });
}

template <class T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  return add_row(matmul(x, w), b);
}

/// tanh-approximated GELU.
template <class T>
Var<T> gelu(Var<T> a) {
  Tape<T>* tp = a.tape;
  static constexpr T c = static_cast<T>(0.7978845608028654);
  static constexpr T k = static_cast<T>(0.044715);
  const auto& x = a.value().array();
  Matrix<T> th = (c * (x + k * x.cube())).tanh().matrix();
  Matrix<T> y = (static_cast<T>(0.5) * x * (static_cast<T>(1) + th.array())).matrix();
  return tp->push(std::move(y), detail::any_grad({a}), [tp, a, th = std::move(th)](const Matrix<T>& out, const Matrix<T>& g) {
    const auto& x = a.value().array();
    const auto t = th.array();
    const auto d = static_cast<T>(0.5) * (static_cast<T>(1) + t) +
                   static_cast<T>(0.5) * x * (static_cast<T>(1) - t.square()) * c *
                       (static_cast<T>(1) + static_cast<T>(3) * k * x.square());
    tp->add_grad(a, (g.array() * d).matrix());
  });
}

template <class T>
Var<T> silu(Var<T> a) {
  Tape<T>* tp = a.tape;
  Matrix<T> sig = (static_cast<T>(1) / (static_cast<T>(1) + (-a.value().array()).exp())).matrix();
  Matrix<T> y = a.value().cwiseProduct(sig);
  return tp->push(std::move(y), detail::any_grad({a}), [tp, a, sig = std::move(sig)](const Matrix<T>& out, const Matrix<T>& g) {
    const auto s = sig.array();
    const auto d = s * (static_cast<T>(1) + a.value().array() * (static_cast<T>(1) - s));
    tp->add_grad(a, (g.array() * d).matrix());
  });
}

/// Per-row standardization without affine terms.
template <class T>
Var<T> layer_norm(Var<T> a, T eps = static_cast<T>(1e-5)) {
  Tape<T>* tp = a.tape;
  const Eigen::Index n = a.cols();
  const auto& x = a.value();
  Eigen::Matrix<T, Eigen::Dynamic, 1> mu = x.rowwise().mean();
  Matrix<T> centered = x.colwise() - mu;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv =
      ((centered.array().square().rowwise().sum() / static_cast<T>(n)) + eps).rsqrt().matrix();
  Matrix<T> y = centered.array().colwise() * inv.array();
  return tp->push(std::move(y), detail::any_grad({a}), [tp, a, inv = std::move(inv), n](const Matrix<T>& out, const Matrix<T>& g) {
    const Matrix<T>& yv = out;
    Eigen::Matrix<T, Eigen::Dynamic, 1> gm = g.rowwise().mean();
    Eigen::Matrix<T, Eigen::Dynamic, 1> gym = g.cwiseProduct(yv).rowwise().sum() / static_cast<T>(n);
    Matrix<T> dx = (g.colwise() - gm) - (yv.array().colwise() * gym.array()).matrix();
    tp->add_grad(a, (dx.array().colwise() * inv.array()).matrix());
  });
}

template <class T>
Var<T> softmax_rows(Var<T> a) {
  Tape<T>* tp = a.tape;
  Matrix<T> y = (a.value().colwise() - a.value().rowwise().maxCoeff()).array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  return tp->push(std::move(y), detail::any_grad({a}), [tp, a](const Matrix<T>& out, const Matrix<T>& g) {
    const Matrix<T>& yv = out;
    Eigen::Matrix<T, Eigen::Dynamic, 1> dot = g.cwiseProduct(yv).rowwise().sum();
    tp->add_grad(a, yv.cwiseProduct(g.colwise() - dot));
  });
}

template <class T>
Var<T> slice_cols(Var<T> a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && start + count <= a.cols(), ErrorKind::data, "slice_cols out of range");
  Tape<T>* tp = a.tape;
  return tp->push(a.value().middleCols(start, count), detail::any_grad({a}), [tp, a, start, count](const Matrix<T>& out, const Matrix<T>& g) {
    Matrix<T> ga = Matrix<T>::Zero(a.rows(), a.cols());
    ga.middleCols(start, count) = g;
    tp->add_grad(a, ga);
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), ErrorKind::data, "concat_cols: no inputs");
  Tape<T>* tp = parts.front().tape;
  Eigen::Index rows = parts.front().rows(), cols = 0;
  bool rg = false;
  for (const auto& p : parts) {
    require(p.rows() == rows, ErrorKind::data, "concat_cols: row mismatch ", p.rows(), " vs ", rows);
    cols += p.cols();
    rg = rg || tp->requires_grad(p);
  }
  Matrix<T> y(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    y.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return tp->push(std::move(y), rg, [tp, parts](const Matrix<T>& out, const Matrix<T>& g) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      if (tp->requires_grad(p)) tp->add_grad(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

/// y[t] = a[t - k], zero outside the valid range.
template <class T>
Var<T> shift_rows(Var<T> a, Eigen::Index k) {
  Tape<T>* tp = a.tape;
  const Eigen::Index n = a.rows();
  Matrix<T> y = Matrix<T>::Zero(n, a.cols());
  const Eigen::Index len = std::max<Eigen::Index>(0, n - std::abs(k));
  if (len > 0) {
    if (k >= 0)
      y.bottomRows(len) = a.value().topRows(len);
    else
      y.topRows(len) = a.value().bottomRows(len);
  }
  return tp->push(std::move(y), detail::any_grad({a}), [tp, a, k, n, len](const Matrix<T>& out, const Matrix<T>& g) {
    Matrix<T> ga = Matrix<T>::Zero(n, a.cols());
    if (len > 0) {
      if (k >= 0)
        ga.topRows(len) = g.bottomRows(len);
      else
        ga.bottomRows(len) = g.topRows(len);
    }
    tp->add_grad(a, ga);
  });
}

/// Rows where `replace[t]` is set are swapped for the 1 x C row `fill`.
template <class T>
Var<T> replace_rows(Var<T> a, const std::vector<bool>& replace, Var<T> fill) {
  require(static_cast<Eigen::Index>(replace.size()) == a.rows(), ErrorKind::data, "replace_rows: mask size");
  require(fill.rows() == 1 && fill.cols() == a.cols(), ErrorKind::data, "replace_rows: fill shape");
  Tape<T>* tp = a.tape;
  Matrix<T> y = a.value();
  for (Eigen::Index t = 0; t < y.rows(); ++t)
    if (replace[static_cast<std::size_t>(t)]) y.row(t) = fill.value().row(0);
  return tp->push(std::move(y), detail::any_grad({a, fill}), [tp, a, replace, fill](const Matrix<T>& out, const Matrix<T>& g) {
    Matrix<T> ga = g;
    Matrix<T> gf = Matrix<T>::Zero(1, g.cols());
    for (Eigen::Index t = 0; t < g.rows(); ++t)
      if (replace[static_cast<std::size_t>(t)]) {
        gf += g.row(t);
        ga.row(t).setZero();
      }
    tp->add_grad(a, ga);
    if (tp->requires_grad(fill)) tp->add_grad(fill, gf);
  });
}

/// Pairs columns (j, j + K) of a T x 2K input into log(eps + a^2 + b^2).
template <class T>
Var<T> log_energy_pairs(Var<T> a, T eps) {
  require(a.cols() % 2 == 0, ErrorKind::data, "log_energy_pairs: odd width");
  Tape<T>* tp = a.tape;
  const Eigen::Index k = a.cols() / 2;
  Matrix<T> energy = (a.value().leftCols(k).array().square() + a.value().rightCols(k).array().square() + eps).matrix();
  Matrix<T> y = energy.array().log().matrix();
  return tp->push(std::move(y), detail::any_grad({a}), [tp, a, k, energy = std::move(energy)](const Matrix<T>& out, const Matrix<T>& g) {
    const auto coef = (static_cast<T>(2) * g.array() / energy.array()).eval();
    Matrix<T> ga(a.rows(), a.cols());
    ga.leftCols(k) = (coef * a.value().leftCols(k).array()).matrix();
    ga.rightCols(k) = (coef * a.value().rightCols(k).array()).matrix();
    tp->add_grad(a, ga);
  });
}

template <class T>
Var<T> mean_all(Var<T> a) {
  Tape<T>* tp = a.tape;
  Matrix<T> y(1, 1);
  y(0, 0) = a.value().mean();
  return tp->push(std::move(y), detail::any_grad({a}), [tp, a](const Matrix<T>& out, const Matrix<T>& g) {
    const T each = g(0, 0) / static_cast<T>(a.value().size());
    tp->add_grad(a, Matrix<T>::Constant(a.rows(), a.cols(), each));
  });
}

/// Mean of (a - target)^2 over the entries of rows with row_mask set.
template <class T>
Var<T> masked_mse(Var<T> a, const Matrix<T>& target, const std::vector<bool>& row_mask) {
  require(a.rows() == target.rows() && a.cols() == target.cols(), ErrorKind::data, "masked_mse: shape mismatch");
  require(static_cast<Eigen::Index>(row_mask.size()) == a.rows(), ErrorKind::data, "masked_mse: mask size");
  Tape<T>* tp = a.tape;
  Eigen::Index rows = 0;
  T acc = 0;
  for (Eigen::Index t = 0; t < a.rows(); ++t)
    if (row_mask[static_cast<std::size_t>(t)]) {
      acc += (a.value().row(t) - target.row(t)).squaredNorm();
      ++rows;
    }
  require(rows > 0, ErrorKind::data, "no masked frames");
  const T denom = static_cast<T>(rows * a.cols());
  Matrix<T> y(1, 1);
  y(0, 0) = acc / denom;
  return tp->push(std::move(y), detail::any_grad({a}), [tp, a, target, row_mask, denom](const Matrix<T>& out, const Matrix<T>& g) {
    const T coef = static_cast<T>(2) * g(0, 0) / denom;
    Matrix<T> ga = Matrix<T>::Zero(a.rows(), a.cols());
    for (Eigen::Index t = 0; t < a.rows(); ++t)
      if (row_mask[static_cast<std::size_t>(t)])
        ga.row(t) = coef * (a.value().row(t) - target.row(t));
    tp->add_grad(a, ga);
  });
}

template <class T>
Var<T> mse(Var<T> a, const Matrix<T>& target) {
  return masked_mse(a, target, std::vector<bool>(static_cast<std::size_t>(a.rows()), true));
}

}  // namespace dryflow::nn
