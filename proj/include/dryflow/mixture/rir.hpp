// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "dryflow/audio/waveform.hpp"
#include "dryflow/error.hpp"
#include "dryflow/rng.hpp"

namespace dryflow {

struct RoomImpulseResponse {
  std::vector<double> taps;
  int sample_rate = kPipelineRate;
  std::size_t direct_path_index = 0;

  /// Validates the taps and locates the direct path as the largest-magnitude
  /// tap (first one on ties).
  static RoomImpulseResponse from_taps(std::vector<double> taps, int rate = kPipelineRate) {
    require(!taps.empty(), ErrorKind::data, "degenerate RIR: no taps");
    RoomImpulseResponse rir;
    double best = 0.0;
    for (std::size_t i = 0; i < taps.size(); ++i) {
      require(std::isfinite(taps[i]), ErrorKind::data, "RIR contains non-finite taps");
      if (std::abs(taps[i]) > best) best = std::abs(taps[i]), rir.direct_path_index = i;
    }
    require(best > 0.0, ErrorKind::data, "degenerate RIR");
    rir.taps = std::move(taps);
    rir.sample_rate = rate;
    return rir;
  }

  static RoomImpulseResponse from_waveform(const Waveform& w) { return from_taps(w.samples, w.sample_rate); }
};

/// Full linear convolution (length N + K - 1).
inline std::vector<double> convolve_full(std::span<const double> x, std::span<const double> h) {
  if (x.empty() || h.empty()) return {};
  const std::size_t n = x.size() + h.size() - 1;
  std::vector<double> out(n, 0.0);
  if (x.size() * h.size() <= (1u << 20)) {
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t k = 0; k < h.size(); ++k) out[i + k] += x[i] * h[k];
    return out;
  }
  std::size_t nfft = 1;
  while (nfft < n) nfft <<= 1;
  std::vector<double> a(nfft, 0.0), b(nfft, 0.0);
  std::copy(x.begin(), x.end(), a.begin());
  std::copy(h.begin(), h.end(), b.begin());
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> fa, fb;
  fft.fwd(fa, a);
  fft.fwd(fb, b);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> y;
  fft.inv(y, fa, nfft);
  std::copy_n(y.begin(), n, out.begin());
  return out;
}

/// Reverberates `dry` and shifts the result left by the direct-path delay so
/// the strongest tap lands at lag 0. Output keeps the input length.
inline Waveform convolve_rir(const Waveform& dry, const RoomImpulseResponse& rir) {
  require(dry.sample_rate == rir.sample_rate, ErrorKind::data, "convolve_rir: sample rate mismatch (",
          dry.sample_rate, " vs ", rir.sample_rate, ")");
  require(std::any_of(rir.taps.begin(), rir.taps.end(), [](double v) { return v != 0.0; }), ErrorKind::data,
          "degenerate RIR");
  const auto full = convolve_full(dry.view(), rir.taps);
  std::vector<double> out(dry.size(), 0.0);
  const std::size_t d = rir.direct_path_index;
  for (std::size_t i = 0; i < out.size() && i + d < full.size(); ++i) out[i] = full[i + d];
  return Waveform(std::move(out), dry.sample_rate);
}

/// Samples kept after the direct path for an early-reflection window; at
/// least the direct-path tap itself survives.
inline std::size_t early_window_samples(double window_ms, int rate) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(window_ms * rate / 1000.0)));
}

/// Zeroes every tap at or beyond direct_path_index + window; earlier taps are
/// preserved exactly.
inline RoomImpulseResponse truncate_rir_early(const RoomImpulseResponse& rir, double window_ms) {
  require(window_ms > 0.0, ErrorKind::config, "early window must be positive");
  RoomImpulseResponse out = rir;
  const std::size_t end = rir.direct_path_index + early_window_samples(window_ms, rir.sample_rate);
  for (std::size_t i = end; i < out.taps.size(); ++i) out.taps[i] = 0.0;
  return out;
}

/// Toy exponential-decay RIR: unit direct path after `predelay` samples,
/// followed by Gaussian reflections decaying 60 dB over rt60 seconds.
/// Test-only generator; not a room-acoustics model.
inline RoomImpulseResponse synthetic_rir(double rt60, std::uint64_t seed, std::size_t predelay = 0,
                                         int rate = kPipelineRate, double reflection_gain = 0.3) {
  require(rt60 > 0.0, ErrorKind::config, "rt60 must be positive");
  Rng rng(seed);
  const auto length = predelay + static_cast<std::size_t>(std::ceil(rt60 * rate));
  std::vector<double> taps(length, 0.0);
  taps[predelay] = 1.0;
  const double decay = std::log(1000.0) / (rt60 * rate);
  for (std::size_t i = predelay + 1; i < length; ++i) {
    const double v = reflection_gain * rng.normal() * std::exp(-decay * static_cast<double>(i - predelay));
    taps[i] = std::clamp(v, -0.9, 0.9);
  }
  return RoomImpulseResponse::from_taps(std::move(taps), rate);
}

}  // namespace dryflow
