// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "dryflow/audio/waveform.hpp"
#include "dryflow/error.hpp"
#include "dryflow/tensor.hpp"

namespace dryflow {

/// Analysis parameters for the generative Mel domain. Defaults give 100 bands
/// at 50 frames/s for 16 kHz input.
struct MelConfig {
  int sample_rate = 16000;
  int n_fft = 1280;
  int win_length = 1280;
  int hop = 320;
  int n_mels = 100;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_floor = 1e-5;

  int n_freqs() const { return n_fft / 2 + 1; }
  double frame_rate() const { return static_cast<double>(sample_rate) / hop; }

  void validate() const {
    require(sample_rate > 0 && hop > 0 && n_fft > 0 && n_mels > 0, ErrorKind::config,
            "mel config: sizes must be positive");
    require(win_length == n_fft, ErrorKind::config, "mel config: win_length must equal n_fft");
    require(n_fft % 2 == 0, ErrorKind::config, "mel config: n_fft must be even");
    require(sample_rate % hop == 0, ErrorKind::config, "mel config: hop must divide the sample rate");
    require(f_min >= 0.0 && f_max > f_min && f_max <= 0.5 * sample_rate, ErrorKind::config,
            "mel config: invalid frequency range");
    require(log_floor > 0.0, ErrorKind::config, "mel config: log_floor must be positive");
  }

  bool operator==(const MelConfig&) const = default;
};

/// frames x n_mels natural-log Mel magnitudes.
struct MelSpectrogram {
  MatrixD values;
  double frame_rate = 50.0;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index bins() const { return values.cols(); }
};

/// Frame k is centered on sample k*hop (reflection padding); the trailing
/// partial hop is dropped, so the count is floor(N / hop).
inline std::int64_t frame_count(std::int64_t num_samples, const MelConfig& cfg) {
  return num_samples / cfg.hop;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
  return w;
}

/// Center frequencies (Hz) of the triangular filters.
inline std::vector<double> mel_band_centers(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> c(static_cast<std::size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m)
    c[static_cast<std::size_t>(m)] = mel_to_hz(lo + (hi - lo) * (m + 1) / (cfg.n_mels + 1));
  return c;
}

/// n_mels x n_freqs un-normalized triangular filters on the HTK Mel scale.
inline MatrixD mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const int n_freqs = cfg.n_freqs();
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (int i = 0; i < cfg.n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] = mel_to_hz(lo + (hi - lo) * i / (cfg.n_mels + 1));

  MatrixD fb = MatrixD::Zero(cfg.n_mels, n_freqs);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < n_freqs; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / cfg.n_fft;
      const double up = (f - left) / (center - left);
      const double down = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(up, down));
    }
  }
  return fb;
}

using ComplexFrames = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// frames x n_fft matrix of raw (unwindowed) analysis frames under the
/// centered reflection-padding convention shared by every 50 Hz feature.
inline MatrixD frame_signal(std::span<const double> x, const MelConfig& cfg) {
  const auto n = static_cast<std::int64_t>(x.size());
  require(n >= cfg.n_fft, ErrorKind::data, "input too short: ", n, " samples < window ", cfg.n_fft);
  const int pad = cfg.n_fft / 2;
  const std::int64_t frames = frame_count(n, cfg);
  auto sample = [&](std::int64_t i) {
    // reflect about the edges, excluding the edge sample itself
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
    return x[static_cast<std::size_t>(i)];
  };
  MatrixD out(frames, cfg.n_fft);
  for (std::int64_t k = 0; k < frames; ++k) {
    const std::int64_t start = k * cfg.hop - pad;
    for (int i = 0; i < cfg.n_fft; ++i) out(k, i) = sample(start + i);
  }
  return out;
}

/// Centered STFT with reflection padding: frames x (n_fft/2 + 1).
inline ComplexFrames stft(std::span<const double> x, const MelConfig& cfg) {
  const MatrixD frames = frame_signal(x, cfg);
  const auto window = hann_window(cfg.win_length);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<double> buf(static_cast<std::size_t>(cfg.n_fft));
  std::vector<std::complex<double>> spec;
  ComplexFrames out(frames.rows(), cfg.n_freqs());
  for (Eigen::Index k = 0; k < frames.rows(); ++k) {
    for (int i = 0; i < cfg.n_fft; ++i)
      buf[static_cast<std::size_t>(i)] = window[static_cast<std::size_t>(i)] * frames(k, i);
    fft.fwd(spec, buf);
    for (int f = 0; f < cfg.n_freqs(); ++f) out(k, f) = spec[static_cast<std::size_t>(f)];
  }
  return out;
}

/// Weighted overlap-add inverse of stft(); returns frames*hop samples.
inline std::vector<double> istft(const ComplexFrames& spec, const MelConfig& cfg) {
  const std::int64_t frames = spec.rows();
  const std::int64_t n = frames * cfg.hop;
  const int pad = cfg.n_fft / 2;
  const auto window = hann_window(cfg.win_length);
  std::vector<double> out(static_cast<std::size_t>(n), 0.0), norm(static_cast<std::size_t>(n), 0.0);

  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);
  std::vector<std::complex<double>> half(static_cast<std::size_t>(cfg.n_freqs()));
  std::vector<double> frame;
  for (std::int64_t k = 0; k < frames; ++k) {
    for (int f = 0; f < cfg.n_freqs(); ++f) half[static_cast<std::size_t>(f)] = spec(k, f);
    fft.inv(frame, half, cfg.n_fft);
    const std::int64_t start = k * cfg.hop - pad;
    for (int i = 0; i < cfg.n_fft; ++i) {
      const std::int64_t t = start + i;
      if (t < 0 || t >= n) continue;
      const double w = window[static_cast<std::size_t>(i)];
      out[static_cast<std::size_t>(t)] += w * frame[static_cast<std::size_t>(i)];
      norm[static_cast<std::size_t>(t)] += w * w;
    }
  }
  for (std::size_t t = 0; t < out.size(); ++t)
    if (norm[t] > 1e-10) out[t] /= norm[t];
  return out;
}

inline MelSpectrogram log_mel(const Waveform& wav, const MelConfig& cfg, const MatrixD& filterbank) {
  require(wav.sample_rate == cfg.sample_rate, ErrorKind::data, "log_mel: sample rate ", wav.sample_rate,
          " does not match config rate ", cfg.sample_rate);
  const ComplexFrames spec = stft(wav.view(), cfg);
  const MatrixD mag = spec.cwiseAbs();
  MelSpectrogram mel;
  mel.frame_rate = cfg.frame_rate();
  mel.values = (mag * filterbank.transpose()).array().max(cfg.log_floor).log().matrix();
  return mel;
}

inline MelSpectrogram log_mel(const Waveform& wav, const MelConfig& cfg) {
  return log_mel(wav, cfg, mel_filterbank(cfg));
}

/// Per-bin affine statistics of log-Mel frames (corpus normalization).
struct MelStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;

  static MelStats identity(int bins) {
    return {Eigen::RowVectorXd::Zero(bins), Eigen::RowVectorXd::Ones(bins)};
  }

  /// Pools every frame of every matrix; stddev is floored at 1e-3.
  static MelStats estimate(const std::vector<MatrixD>& mels) {
    require(!mels.empty(), ErrorKind::data, "cannot estimate Mel statistics from no data");
    const Eigen::Index bins = mels.front().cols();
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(bins), sq = Eigen::RowVectorXd::Zero(bins);
    double count = 0.0;
    for (const auto& m : mels) {
      require(m.cols() == bins, ErrorKind::data, "Mel statistics: inconsistent bin count");
      sum += m.colwise().sum();
      sq += m.array().square().matrix().colwise().sum();
      count += static_cast<double>(m.rows());
    }
    MelStats s;
    s.mean = sum / count;
    s.stddev = ((sq / count).array() - s.mean.array().square()).max(0.0).sqrt().max(1e-3).matrix();
    return s;
  }

  MatrixD normalize(const MatrixD& m) const {
    return ((m.rowwise() - mean).array().rowwise() / stddev.array()).matrix();
  }
  MatrixD denormalize(const MatrixD& m) const {
    return ((m.array().rowwise() * stddev.array()).matrix().rowwise() + mean);
  }
};

}  // namespace dryflow
