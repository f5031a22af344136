// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "dryflow/error.hpp"
#include "dryflow/rng.hpp"
#include "dryflow/tensor.hpp"

namespace dryflow::nn {

/// FNV-1a over raw bytes.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Named trainable tensors. Indices are stable once added.
template <class T>
class ParamStore {
 public:
  std::size_t add(const std::string& name, Matrix<T> init) {
    require(!index_.contains(name), ErrorKind::config, "duplicate parameter ", name);
    index_[name] = values_.size();
    names_.push_back(name);
    values_.push_back(std::move(init));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  Matrix<T>& value(std::size_t i) { return values_.at(i); }
  const Matrix<T>& value(std::size_t i) const { return values_.at(i); }

  std::size_t index(const std::string& name) const {
    auto it = index_.find(name);
    require(it != index_.end(), ErrorKind::data, "unknown parameter ", name);
    return it->second;
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
  }

  /// Hash of names, shapes and raw value bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      h = fnv1a(names_[i].data(), names_[i].size(), h);
      const std::int64_t shape[2] = {values_[i].rows(), values_[i].cols()};
      h = fnv1a(shape, sizeof(shape), h);
      h = fnv1a(values_[i].data(), sizeof(T) * static_cast<std::size_t>(values_[i].size()), h);
    }
    return h;
  }

  template <class U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < values_.size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix<T>> values_;
  std::map<std::string, std::size_t> index_;
};

template <class T>
struct Gradients {
  std::vector<Matrix<T>> values;

  Gradients() = default;
  explicit Gradients(const ParamStore<T>& store) {
    for (std::size_t i = 0; i < store.size(); ++i)
      values.push_back(Matrix<T>::Zero(store.value(i).rows(), store.value(i).cols()));
  }

  void add(const Gradients& other) {
    for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
  }
  void scale(T s) {
    for (auto& g : values) g *= s;
  }
  double norm() const {
    double acc = 0.0;
    for (const auto& g : values) acc += static_cast<double>(g.squaredNorm());
    return std::sqrt(acc);
  }
  bool finite() const {
    for (const auto& g : values)
      if (!g.allFinite()) return false;
    return true;
  }
};

/// Uniform Glorot initialization.
template <class T>
Matrix<T> glorot(Eigen::Index rows, Eigen::Index cols, Rng& rng, double gain = 1.0) {
  const double a = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.uniform(-a, a));
  return m;
}

template <class T>
Matrix<T> gaussian_init(Eigen::Index rows, Eigen::Index cols, Rng& rng, double stddev) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
  return m;
}

}  // namespace dryflow::nn
