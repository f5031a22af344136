// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "dryflow/audio/waveform.hpp"
#include "dryflow/mixture/corpus.hpp"
#include "dryflow/mixture/rir.hpp"
#include "dryflow/rng.hpp"

namespace dryflow {

enum class TargetMode { dry, early_reflection };

inline std::string to_string(TargetMode m) { return m == TargetMode::dry ? "dry" : "early_reflection"; }

inline TargetMode parse_target_mode(const std::string& s) {
  if (s == "dry") return TargetMode::dry;
  if (s == "early_reflection") return TargetMode::early_reflection;
  fail(ErrorKind::config, "unknown target mode '", s, "' (expected dry or early_reflection)");
}

struct MixtureSpec {
  double snr_db = 0.0;
  bool apply_reverb = false;
  TargetMode target_mode = TargetMode::dry;
  double early_window_ms = 50.0;
};

struct MixtureConfig {
  double snr_low = -5.0;
  double snr_high = 15.0;
  double reverb_prob = 0.8;
  TargetMode target_mode = TargetMode::dry;
  double early_window_ms = 50.0;
  double segment_seconds = 2.0;
  int max_retries = 10;

  void validate() const {
    require(snr_low <= snr_high, ErrorKind::config, "mixture: snr_low must not exceed snr_high");
    require(reverb_prob >= 0.0 && reverb_prob <= 1.0, ErrorKind::config, "mixture: reverb_prob outside [0, 1]");
    require(early_window_ms > 0.0, ErrorKind::config, "mixture: early_window_ms must be positive");
    require(segment_seconds > 0.0, ErrorKind::config, "mixture: segment_seconds must be positive");
    require(max_retries >= 0, ErrorKind::config, "mixture: max_retries must be non-negative");
  }

  std::size_t segment_samples() const {
    return static_cast<std::size_t>(std::llround(segment_seconds * kPipelineRate));
  }
};

/// The two additive parts of a mixture, kept for SNR verification.
struct MixtureComponents {
  std::vector<double> speech;
  std::vector<double> noise;  // already scaled
  double gain = 1.0;
};

/// Scales `noise` so that 10*log10(P_speech / P_scaled_noise) == snr_db, with
/// powers taken as mean squares over the whole segment.
inline MixtureComponents mix_components(std::span<const double> speech, std::span<const double> noise,
                                        double snr_db) {
  require(speech.size() == noise.size(), ErrorKind::data, "mix_at_snr: length mismatch (", speech.size(),
          " vs ", noise.size(), ")");
  const double ps = mean_power(speech), pn = mean_power(noise);
  require(ps > 0.0 && pn > 0.0, ErrorKind::data, "degenerate mixing input");
  MixtureComponents c;
  c.gain = std::sqrt(ps / (pn * std::pow(10.0, snr_db / 10.0)));
  c.speech.assign(speech.begin(), speech.end());
  c.noise.resize(noise.size());
  for (std::size_t i = 0; i < noise.size(); ++i) c.noise[i] = c.gain * noise[i];
  return c;
}

inline Waveform mix_at_snr(const Waveform& speech, const Waveform& noise, double snr_db) {
  require(speech.sample_rate == noise.sample_rate, ErrorKind::data, "mix_at_snr: sample rate mismatch");
  const auto c = mix_components(speech.view(), noise.view(), snr_db);
  std::vector<double> out(c.speech.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c.speech[i] + c.noise[i];
  return Waveform(std::move(out), speech.sample_rate);
}

struct TrainingPair {
  Waveform noisy;
  Waveform target;
  MixtureSpec spec;
  std::uint64_t seed = 0;
  std::size_t speech_index = 0;
  std::size_t noise_index = 0;
  std::optional<std::size_t> rir_index;  // set only when reverb was applied
  MixtureComponents components;          // noisy == speech + noise (after any clip gain)
};

namespace detail {
enum Stream : std::uint64_t { speech_stream = 1, reverb_stream, snr_stream, rir_stream, noise_stream };
}

/// Builds one (noisy, target) pair. Every random choice comes from its own
/// sub-stream of `seed`, so the dry target depends only on the speech stream.
inline TrainingPair sample_training_pair(std::uint64_t seed, const AudioCorpus& speech, const AudioCorpus& noise,
                                         const AudioCorpus& rirs, const MixtureConfig& cfg) {
  cfg.validate();
  require(speech.size() > 0, ErrorKind::data, "speech corpus is empty");
  require(noise.size() > 0, ErrorKind::data, "noise corpus is empty");
  const std::size_t seg = cfg.segment_samples();

  Rng srng(derive_seed(seed, detail::speech_stream));
  Waveform dry;
  std::size_t speech_index = 0;
  for (int attempt = 0;; ++attempt) {
    speech_index = srng.index(speech.size());
    const Waveform utt = speech.load(speech_index);
    if (utt.size() >= seg) {
      const std::size_t off = srng.index(utt.size() - seg + 1);
      dry = Waveform(std::vector<double>(utt.samples.begin() + off, utt.samples.begin() + off + seg),
                     utt.sample_rate);
      if (mean_power(dry.view()) > 0.0) break;
    }
    require(attempt < cfg.max_retries, ErrorKind::data, "no usable utterance of ", cfg.segment_seconds,
            " s after ", cfg.max_retries, " retries (seed ", seed, ")");
  }

  TrainingPair pair;
  pair.seed = seed;
  pair.speech_index = speech_index;
  pair.spec.target_mode = cfg.target_mode;
  pair.spec.early_window_ms = cfg.early_window_ms;
  pair.spec.apply_reverb = Rng(derive_seed(seed, detail::reverb_stream)).bernoulli(cfg.reverb_prob);
  pair.spec.snr_db = Rng(derive_seed(seed, detail::snr_stream)).uniform(cfg.snr_low, cfg.snr_high);

  std::optional<RoomImpulseResponse> rir;
  if (pair.spec.apply_reverb) {
    require(rirs.size() > 0, ErrorKind::data, "RIR corpus is empty but reverb_prob > 0");
    Rng rrng(derive_seed(seed, detail::rir_stream));
    pair.rir_index = rrng.index(rirs.size());
    rir = RoomImpulseResponse::from_waveform(rirs.load(*pair.rir_index));
  }

  Rng nrng(derive_seed(seed, detail::noise_stream));
  pair.noise_index = nrng.index(noise.size());
  const Waveform nwav = noise.load(pair.noise_index);
  require(!nwav.empty(), ErrorKind::data, "empty noise file ", noise.name(pair.noise_index));
  std::vector<double> nseg(seg);
  if (nwav.size() < seg) {
    const std::size_t off = nrng.index(nwav.size());
    for (std::size_t i = 0; i < seg; ++i) nseg[i] = nwav.samples[(off + i) % nwav.size()];
  } else {
    const std::size_t off = nrng.index(nwav.size() - seg + 1);
    std::copy_n(nwav.samples.begin() + static_cast<std::ptrdiff_t>(off), seg, nseg.begin());
  }

  const Waveform reverberant = rir ? convolve_rir(dry, *rir) : dry;
  pair.components = mix_components(reverberant.view(), nseg, pair.spec.snr_db);
  std::vector<double> noisy(seg);
  for (std::size_t i = 0; i < seg; ++i) noisy[i] = pair.components.speech[i] + pair.components.noise[i];

  // Clip guard: only the input side is rescaled so the target stays untouched.
  const double peak = peak_abs(noisy);
  if (peak > 1.0) {
    const double g = 1.0 / peak;
    for (std::size_t i = 0; i < seg; ++i) {
      noisy[i] *= g;
      pair.components.speech[i] *= g;
      pair.components.noise[i] *= g;
    }
  }
  pair.noisy = Waveform(std::move(noisy), kPipelineRate);

  if (cfg.target_mode == TargetMode::early_reflection && rir)
    pair.target = convolve_rir(dry, truncate_rir_early(*rir, cfg.early_window_ms));
  else
    pair.target = std::move(dry);
  return pair;
}

}  // namespace dryflow
