// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>

#include "dryflow/error.hpp"
#include "dryflow/nn/params.hpp"

namespace dryflow::nn {

/// Linear warm-up from 0 to `peak_lr` over warmup_fraction * total steps,
/// then half-cosine decay reaching `final_lr` at `total_steps`.
inline double lr_schedule(std::int64_t step, std::int64_t total_steps, double peak_lr, double final_lr,
                          double warmup_fraction) {
  require(total_steps > 0, ErrorKind::config, "lr_schedule: total_steps must be positive");
  require(step >= 0 && step <= total_steps, ErrorKind::config, "lr_schedule: step ", step, " outside [0, ",
          total_steps, "]");
  require(warmup_fraction > 0.0 && warmup_fraction < 1.0, ErrorKind::config,
          "lr_schedule: warmup_fraction must lie in (0, 1)");
  require(final_lr >= 0.0 && final_lr < peak_lr, ErrorKind::config, "lr_schedule: need 0 <= final_lr < peak_lr");
  const double s = static_cast<double>(step);
  const double warm = warmup_fraction * static_cast<double>(total_steps);
  if (s < warm) return peak_lr * s / warm;
  const double progress = (s - warm) / (static_cast<double>(total_steps) - warm);
  return final_lr + (peak_lr - final_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

struct OptimizerConfig {
  std::int64_t steps = 1000;
  double peak_lr = 1e-3;
  double final_lr = 1e-6;
  double warmup_fraction = 0.10;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  int batch = 4;
  double segment_seconds = 2.0;

  void validate() const {
    require(steps >= 0, ErrorKind::config, "optimizer: steps must be non-negative");
    require(warmup_fraction > 0.0 && warmup_fraction < 1.0, ErrorKind::config,
            "optimizer: warmup_fraction must lie in (0, 1)");
    require(final_lr >= 0.0 && final_lr < peak_lr, ErrorKind::config, "optimizer: need final_lr < peak_lr");
    require(batch >= 1, ErrorKind::config, "optimizer: batch must be >= 1");
    require(segment_seconds > 0.0, ErrorKind::config, "optimizer: segment_seconds must be positive");
    require(clip_norm > 0.0, ErrorKind::config, "optimizer: clip_norm must be positive");
  }

  double lr_at(std::int64_t step) const { return lr_schedule(step, steps, peak_lr, final_lr, warmup_fraction); }
};

/// AdamW with global-norm gradient clipping. Weight decay skips 1 x C rows
/// (biases, gains, embeddings).
template <class T>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const ParamStore<T>& store) : m_(store), v_(store) {}

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  Gradients<T>& first_moment() { return m_; }
  Gradients<T>& second_moment() { return v_; }
  const Gradients<T>& first_moment() const { return m_; }
  const Gradients<T>& second_moment() const { return v_; }

  /// Returns the pre-clipping gradient norm.
  double step(ParamStore<T>& store, Gradients<T> grads, double lr, const OptimizerConfig& cfg) {
    const double norm = grads.norm();
    require(std::isfinite(norm), ErrorKind::numeric, "non-finite gradient norm");
    if (norm > cfg.clip_norm) grads.scale(static_cast<T>(cfg.clip_norm / norm));
    ++t_;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store.value(i);
      const auto& g = grads.values[i];
      auto& m = m_.values[i];
      auto& v = v_.values[i];
      m = static_cast<T>(cfg.beta1) * m + static_cast<T>(1.0 - cfg.beta1) * g;
      v = static_cast<T>(cfg.beta2) * v + static_cast<T>(1.0 - cfg.beta2) * g.cwiseProduct(g);
      if (lr == 0.0) continue;
      const bool decay = p.rows() > 1;
      const auto update = ((m.array() / static_cast<T>(c1)) /
                           ((v.array() / static_cast<T>(c2)).sqrt() + static_cast<T>(cfg.eps)))
                              .eval();
      if (decay) p *= static_cast<T>(1.0 - lr * cfg.weight_decay);
      p.array() -= static_cast<T>(lr) * update;
    }
    return norm;
  }

 private:
  Gradients<T> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace dryflow::nn
