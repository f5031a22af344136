// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "dryflow/error.hpp"

namespace dryflow {

inline constexpr int kPipelineRate = 16000;

/// Mono sample sequence with its rate. Samples are nominally in [-1, 1].
struct Waveform {
  std::vector<double> samples;
  int sample_rate = kPipelineRate;

  Waveform() = default;
  Waveform(std::vector<double> s, int rate) : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  double seconds() const noexcept { return static_cast<double>(samples.size()) / sample_rate; }
  std::span<const double> view() const noexcept { return samples; }
};

inline void validate(const Waveform& wav) {
  require(wav.sample_rate > 0, ErrorKind::data, "invalid sample rate ", wav.sample_rate);
  for (double v : wav.samples)
    require(std::isfinite(v), ErrorKind::data, "waveform contains non-finite samples");
}

/// Mean square over the whole sequence.
inline double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return acc / static_cast<double>(x.size());
}

inline double peak_abs(std::span<const double> x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

}  // namespace dryflow
