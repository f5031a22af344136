// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>

#include "dryflow/audio/mel.hpp"
#include "dryflow/audio/waveform.hpp"
#include "dryflow/error.hpp"
#include "dryflow/mixture/simulate.hpp"
#include "dryflow/semantic/encoder.hpp"

namespace dryflow::eval {

// Proxy metrics. None of these approximates a listening-test or ASR score;
// they measure spectral and representation distance only.

inline constexpr double kNepersToDb = 20.0 / std::numbers::ln10;

namespace detail {
inline void same_shape(const MatrixD& a, const MatrixD& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorKind::data, what, ": shape mismatch ", a.rows(), "x",
          a.cols(), " vs ", b.rows(), "x", b.cols());
  require(a.size() > 0, ErrorKind::data, what, ": empty input");
}
}  // namespace detail

/// Log-spectral distance in dB between natural-log Mel matrices: per-frame
/// RMS over bins, averaged over frames.
inline double lsd(const MatrixD& ref, const MatrixD& hyp) {
  detail::same_shape(ref, hyp, "lsd");
  const auto per_frame = (ref - hyp).array().square().rowwise().mean().sqrt();
  return kNepersToDb * per_frame.mean();
}

inline double lsd(const MelSpectrogram& ref, const MelSpectrogram& hyp) { return lsd(ref.values, hyp.values); }

inline double mel_mse(const MatrixD& ref, const MatrixD& hyp) {
  detail::same_shape(ref, hyp, "mel_mse");
  return (ref - hyp).squaredNorm() / static_cast<double>(ref.size());
}

inline double mel_mse(const MelSpectrogram& ref, const MelSpectrogram& hyp) {
  return mel_mse(ref.values, hyp.values);
}

/// Mean per-frame cosine similarity; frames where either vector has zero norm
/// are skipped.
inline double frame_cosine(const MatrixD& a, const MatrixD& b) {
  detail::same_shape(a, b, "semantic_cos");
  double total = 0.0;
  Eigen::Index used = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double na = a.row(i).norm(), nb = b.row(i).norm();
    if (na == 0.0 || nb == 0.0) continue;
    total += std::clamp(a.row(i).dot(b.row(i)) / (na * nb), -1.0, 1.0);
    ++used;
  }
  require(used > 0, ErrorKind::data, "semantic_cos: every frame has a zero-norm representation");
  return total / static_cast<double>(used);
}

inline double semantic_cos(const Waveform& ref, const Waveform& hyp, const semantic::PhoneticEncoder& encoder) {
  require(ref.size() == hyp.size(), ErrorKind::data, "semantic_cos: durations differ (", ref.size(), " vs ",
          hyp.size(), " samples)");
  return frame_cosine(encoder.encode(ref).values, encoder.encode(hyp).values);
}

inline double measure_snr(std::span<const double> speech, std::span<const double> noise) {
  require(speech.size() == noise.size(), ErrorKind::data, "measure_snr: length mismatch");
  const double ps = mean_power(speech), pn = mean_power(noise);
  require(ps > 0.0 && pn > 0.0, ErrorKind::data, "measure_snr: zero-power component");
  return 10.0 * std::log10(ps / pn);
}

inline double measure_snr(const MixtureComponents& c) { return measure_snr(c.speech, c.noise); }

/// Both waveforms cropped symmetrically around their centers to the shorter
/// length. `dropped` counts samples removed from the longer one.
struct CropResult {
  Waveform a;
  Waveform b;
  std::size_t dropped = 0;
};

inline CropResult center_crop_pair(const Waveform& a, const Waveform& b) {
  require(a.sample_rate == b.sample_rate, ErrorKind::data, "center crop: sample rates differ");
  const std::size_t n = std::min(a.size(), b.size());
  auto crop = [n](const Waveform& w) {
    const std::size_t off = (w.size() - n) / 2;
    return Waveform(std::vector<double>(w.samples.begin() + static_cast<std::ptrdiff_t>(off),
                                        w.samples.begin() + static_cast<std::ptrdiff_t>(off + n)),
                    w.sample_rate);
  };
  return {crop(a), crop(b), std::max(a.size(), b.size()) - n};
}

}  // namespace dryflow::eval
