// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dryflow/audio/waveform.hpp"
#include "dryflow/error.hpp"

namespace dryflow {

struct ResampleOptions {
  int zero_crossings = 32;   // kernel half-width, in zero crossings of the lower rate
  double rolloff = 0.945;    // cutoff as a fraction of the lower Nyquist
  double kaiser_beta = 8.6;
};

/// Windowed-sinc polyphase resampler for integer rate ratios. Output length is
/// ceil(N * target / source); samples outside the input are treated as zero.
inline Waveform resample(const Waveform& wav, int target_rate, const ResampleOptions& opt = {}) {
  require(target_rate > 0, ErrorKind::config, "target rate must be positive");
  require(!wav.empty(), ErrorKind::data, "empty waveform");
  validate(wav);
  if (wav.sample_rate == target_rate) return wav;

  const std::int64_t g = std::gcd(wav.sample_rate, target_rate);
  const std::int64_t up = target_rate / g;
  const std::int64_t down = wav.sample_rate / g;
  // Cutoff in cycles per input sample, relative to the input Nyquist.
  const double cutoff = opt.rolloff * std::min(1.0, static_cast<double>(up) / static_cast<double>(down));
  const double half_width = opt.zero_crossings / cutoff;
  const auto taps = static_cast<std::int64_t>(std::ceil(half_width));
  const std::int64_t width = 2 * taps + 1;
  const double i0_beta = std::cyl_bessel_i(0.0, opt.kaiser_beta);

  auto kernel = [&](double x) {
    const double r = x / half_width;
    if (std::abs(r) >= 1.0) return 0.0;
    const double w = std::cyl_bessel_i(0.0, opt.kaiser_beta * std::sqrt(1.0 - r * r)) / i0_beta;
    const double arg = M_PI * cutoff * x;
    const double s = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
    return cutoff * s * w;
  };

  // Phase p holds the fractional offset p/up between output and input grids.
  std::vector<double> table(static_cast<std::size_t>(up * width));
  for (std::int64_t p = 0; p < up; ++p) {
    const double frac = static_cast<double>(p) / static_cast<double>(up);
    for (std::int64_t k = -taps; k <= taps; ++k)
      table[static_cast<std::size_t>(p * width + k + taps)] = kernel(static_cast<double>(k) - frac);
  }

  const auto n_in = static_cast<std::int64_t>(wav.size());
  const std::int64_t n_out = (n_in * up + down - 1) / down;
  std::vector<double> out(static_cast<std::size_t>(n_out));
  for (std::int64_t n = 0; n < n_out; ++n) {
    const std::int64_t pos = n * down;
    const std::int64_t base = pos / up;
    const std::int64_t phase = pos % up;
    const double* h = table.data() + phase * width;
    double acc = 0.0;
    const std::int64_t lo = std::max<std::int64_t>(-taps, -base);
    const std::int64_t hi = std::min<std::int64_t>(taps, n_in - 1 - base);
    for (std::int64_t k = lo; k <= hi; ++k) acc += h[k + taps] * wav.samples[static_cast<std::size_t>(base + k)];
    out[static_cast<std::size_t>(n)] = acc;
  }
  return Waveform(std::move(out), target_rate);
}

}  // namespace dryflow
