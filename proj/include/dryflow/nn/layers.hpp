// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dryflow/nn/autodiff.hpp"
#include "dryflow/nn/params.hpp"
#include "dryflow/rng.hpp"

namespace dryflow::nn {

// Building blocks addressed by parameter-name prefix: `<name>.w`, `<name>.b`.

template <class T>
void add_linear(ParamStore<T>& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                bool zero = false, bool bias = true) {
  store.add(name + ".w", zero ? Matrix<T>::Zero(in, out) : glorot<T>(in, out, rng));
  if (bias) store.add(name + ".b", Matrix<T>::Zero(1, out));
}

template <class T>
Var<T> apply_linear(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x) {
  Var<T> y = matmul(x, tape.param(store, name + ".w"));
  if (store.contains(name + ".b")) y = add_row(y, tape.param(store, name + ".b"));
  return y;
}

/// Layer norm with learned gain and bias.
template <class T>
void add_norm(ParamStore<T>& store, const std::string& name, Eigen::Index width) {
  store.add(name + ".g", Matrix<T>::Ones(1, width));
  store.add(name + ".b", Matrix<T>::Zero(1, width));
}

template <class T>
Var<T> apply_norm(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x) {
  return add_row(mul_row(layer_norm(x), tape.param(store, name + ".g")), tape.param(store, name + ".b"));
}

template <class T>
void add_attention(ParamStore<T>& store, const std::string& name, Eigen::Index hidden, Rng& rng) {
  add_linear(store, name + ".qkv", hidden, 3 * hidden, rng);
  add_linear(store, name + ".out", hidden, hidden, rng);
}

/// Bidirectional multi-head scaled dot-product self-attention over frames.
template <class T>
Var<T> apply_attention(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x, int heads) {
  const Eigen::Index hidden = x.cols();
  require(hidden % heads == 0, ErrorKind::config, "hidden size ", hidden, " not divisible by ", heads, " heads");
  const Eigen::Index dh = hidden / heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Var<T> qkv = apply_linear(tape, store, name + ".qkv", x);
  std::vector<Var<T>> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var<T> q = slice_cols(qkv, h * dh, dh);
    Var<T> k = slice_cols(qkv, hidden + h * dh, dh);
    Var<T> v = slice_cols(qkv, 2 * hidden + h * dh, dh);
    Var<T> attn = softmax_rows(scale(matmul_nt(q, k), inv_sqrt));
    outs.push_back(matmul(attn, v));
  }
  return apply_linear(tape, store, name + ".out", heads == 1 ? outs.front() : concat_cols(outs));
}

template <class T>
void add_feed_forward(ParamStore<T>& store, const std::string& name, Eigen::Index hidden, Eigen::Index ffn,
                      Rng& rng) {
  add_linear(store, name + ".up", hidden, ffn, rng);
  add_linear(store, name + ".down", ffn, hidden, rng);
}

template <class T>
Var<T> apply_feed_forward(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x) {
  return apply_linear(tape, store, name + ".down", gelu(apply_linear(tape, store, name + ".up", x)));
}

/// Frame-local mixing: a linear map over [x[t-1], x[t], x[t+1]] followed by
/// GELU. Serves as a convolutional position signal for attention stacks.
template <class T>
void add_conv3(ParamStore<T>& store, const std::string& name, Eigen::Index width, Rng& rng) {
  add_linear(store, name, 3 * width, width, rng);
}

template <class T>
Var<T> apply_conv3(Tape<T>& tape, const ParamStore<T>& store, const std::string& name, Var<T> x) {
  return gelu(apply_linear(tape, store, name, concat_cols<T>({shift_rows(x, 1), x, shift_rows(x, -1)})));
}

/// Sinusoidal embedding of a scalar in [0, 1] (scaled by 1000, DiT-style).
template <class T>
Matrix<T> sinusoidal_embedding(double t, Eigen::Index width) {
  require(width % 2 == 0, ErrorKind::config, "embedding width must be even");
  const Eigen::Index half = width / 2;
  Matrix<T> e(1, width);
  for (Eigen::Index i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = 1000.0 * t * freq;
    e(0, i) = static_cast<T>(std::cos(arg));
    e(0, half + i) = static_cast<T>(std::sin(arg));
  }
  return e;
}

}  // namespace dryflow::nn
