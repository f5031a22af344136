// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

#include "dryflow/audio/mel.hpp"
#include "dryflow/rng.hpp"

namespace dryflow {

/// Mel-to-waveform inversion. A neural vocoder plugs in behind this call.
class Vocoder {
 public:
  virtual ~Vocoder() = default;
  virtual Waveform invert(const MelSpectrogram& mel) const = 0;
};

/// Linear-magnitude estimate from a log-Mel matrix through the filterbank
/// pseudo-inverse, clamped at zero.
inline MatrixD mel_to_magnitude(const MelSpectrogram& mel, const MatrixD& filterbank) {
  const MatrixD pinv = filterbank.completeOrthogonalDecomposition().pseudoInverse();
  const MatrixD linear = mel.values.array().exp().matrix();
  return (linear * pinv.transpose()).cwiseMax(0.0);
}

/// Fast Griffin-Lim (momentum 0.99) starting from seeded random phase.
inline Waveform griffin_lim_invert(const MelSpectrogram& mel, const MelConfig& cfg, int iters,
                                   std::uint64_t seed) {
  require(iters >= 1, ErrorKind::config, "griffin-lim needs at least one iteration");
  require(mel.bins() == cfg.n_mels, ErrorKind::data, "griffin-lim: Mel has ", mel.bins(), " bins, expected ",
          cfg.n_mels);
  require(mel.frames() >= 1, ErrorKind::data, "griffin-lim: empty Mel");
  const MatrixD mag = mel_to_magnitude(mel, mel_filterbank(cfg));

  Rng rng(seed);
  ComplexFrames spec(mag.rows(), mag.cols());
  for (Eigen::Index k = 0; k < mag.rows(); ++k)
    for (Eigen::Index f = 0; f < mag.cols(); ++f)
      spec(k, f) = std::polar(mag(k, f), 2.0 * M_PI * rng.uniform());

  constexpr double momentum = 0.99;
  ComplexFrames prev = ComplexFrames::Zero(mag.rows(), mag.cols());
  std::vector<double> y;
  for (int it = 0; it < iters; ++it) {
    y = istft(spec, cfg);
    // re-analysis of the frames*hop samples yields the same frame count
    const ComplexFrames rebuilt = stft(y, cfg);
    ComplexFrames accel = rebuilt - (momentum / (1.0 + momentum)) * prev;
    prev = rebuilt;
    for (Eigen::Index k = 0; k < mag.rows(); ++k)
      for (Eigen::Index f = 0; f < mag.cols(); ++f) {
        const double a = std::abs(accel(k, f));
        spec(k, f) = a > 1e-12 ? mag(k, f) * accel(k, f) / a : std::complex<double>(mag(k, f), 0.0);
      }
  }
  return Waveform(istft(spec, cfg), cfg.sample_rate);
}

class GriffinLimVocoder final : public Vocoder {
 public:
  GriffinLimVocoder(MelConfig cfg, int iters = 64, std::uint64_t seed = 0)
      : cfg_(cfg), iters_(iters), seed_(seed) {}

  Waveform invert(const MelSpectrogram& mel) const override {
    return griffin_lim_invert(mel, cfg_, iters_, seed_);
  }

 private:
  MelConfig cfg_;
  int iters_;
  std::uint64_t seed_;
};

}  // namespace dryflow
