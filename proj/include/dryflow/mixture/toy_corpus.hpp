// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dryflow/audio/waveform.hpp"
#include "dryflow/error.hpp"
#include "dryflow/mixture/corpus.hpp"
#include "dryflow/mixture/rir.hpp"
#include "dryflow/rng.hpp"

namespace dryflow {

// Synthetic speech-like material: voiced syllables built from harmonic
// series under vowel formant envelopes, optional fricative onsets, and
// silences between syllables.

struct ToySpeaker {
  double f0_low = 100.0;
  double f0_high = 140.0;
  double formant_scale = 1.0;
};

inline ToySpeaker toy_speaker(int index) {
  const double center = 110.0 * std::pow(1.6, index % 4);
  return {center * 0.85, center * 1.15, 1.0 + 0.12 * (index % 4)};
}

namespace detail {
inline constexpr std::array<std::array<double, 3>, 6> kVowelFormants = {{
    {730, 1090, 2440},
    {270, 2290, 3010},
    {300, 870, 2240},
    {530, 1840, 2480},
    {570, 840, 2410},
    {440, 1020, 2240},
}};

inline double formant_gain(double f, const std::array<double, 3>& formants, double scale) {
  static constexpr double kBandwidth[3] = {90.0, 120.0, 180.0};
  static constexpr double kLevel[3] = {1.0, 0.6, 0.35};
  double g = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double d = (f - formants[static_cast<std::size_t>(k)] * scale) / kBandwidth[k];
    g += kLevel[k] / (1.0 + d * d);
  }
  return g / std::sqrt(1.0 + f / 500.0);
}

inline double raised_cosine_env(std::size_t i, std::size_t n, std::size_t ramp) {
  ramp = std::min(ramp, n / 2);
  if (ramp == 0) return 1.0;
  if (i < ramp) return 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(i) / static_cast<double>(ramp));
  if (i >= n - ramp) return 0.5 - 0.5 * std::cos(M_PI * static_cast<double>(n - 1 - i) / static_cast<double>(ramp));
  return 1.0;
}

inline void scale_to_rms(std::vector<double>& x, double rms) {
  double p = 0.0;
  for (double v : x) p += v * v;
  p = std::sqrt(p / static_cast<double>(std::max<std::size_t>(1, x.size())));
  if (p > 0.0)
    for (double& v : x) v *= rms / p;
}
}  // namespace detail

/// One utterance of `seconds` duration at `rate`, normalized to -23 dBFS RMS.
inline Waveform toy_utterance(std::uint64_t seed, const ToySpeaker& speaker, double seconds,
                              int rate = kPipelineRate) {
  require(seconds > 0.0, ErrorKind::config, "toy utterance: duration must be positive");
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  std::vector<double> x(n, 0.0);
  std::size_t pos = static_cast<std::size_t>(rng.uniform(0.03, 0.12) * rate);
  while (pos < n) {
    const auto len = std::min(n - pos, static_cast<std::size_t>(rng.uniform(0.12, 0.28) * rate));
    const auto& vowel = detail::kVowelFormants[rng.index(detail::kVowelFormants.size())];
    const double f0a = rng.uniform(speaker.f0_low, speaker.f0_high);
    const double f0b = std::clamp(f0a * rng.uniform(0.85, 1.15), speaker.f0_low * 0.8, speaker.f0_high * 1.2);
    const double level = rng.uniform(0.6, 1.0);
    const int harmonics = static_cast<int>(7600.0 / std::max(f0a, f0b));
    std::vector<double> amp(static_cast<std::size_t>(harmonics));
    std::vector<double> phase(static_cast<std::size_t>(harmonics));
    for (int h = 0; h < harmonics; ++h) {
      amp[static_cast<std::size_t>(h)] = detail::formant_gain((h + 1) * 0.5 * (f0a + f0b), vowel, speaker.formant_scale);
      phase[static_cast<std::size_t>(h)] = rng.uniform(0.0, 2.0 * M_PI);
    }
    // Optional fricative onset: resonant noise around 3-6 kHz.
    std::size_t fric = 0;
    if (rng.bernoulli(0.4)) {
      fric = std::min(len / 3, static_cast<std::size_t>(rng.uniform(0.03, 0.06) * rate));
      const double fc = rng.uniform(3000.0, 6000.0) * speaker.formant_scale;
      const double r = 0.85, w = 2.0 * M_PI * std::min(fc, 7000.0) / rate;
      double y1 = 0.0, y2 = 0.0;
      for (std::size_t i = 0; i < fric; ++i) {
        const double y = rng.normal() * 0.05 + 2.0 * r * std::cos(w) * y1 - r * r * y2;
        y2 = y1;
        y1 = y;
        x[pos + i] += y * detail::raised_cosine_env(i, fric, fric / 4) * level;
      }
    }
    const std::size_t voiced = len - fric;
    double theta = 0.0;
    for (std::size_t i = 0; i < voiced; ++i) {
      const double frac = static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(1, voiced));
      theta += 2.0 * M_PI * (f0a + (f0b - f0a) * frac) / rate;
      double s = 0.0;
      for (int h = 0; h < harmonics; ++h)
        s += amp[static_cast<std::size_t>(h)] * std::sin((h + 1) * theta + phase[static_cast<std::size_t>(h)]);
      x[pos + fric + i] += s * level * detail::raised_cosine_env(i, voiced, static_cast<std::size_t>(0.015 * rate));
    }
    pos += len + static_cast<std::size_t>(rng.uniform(0.02, 0.10) * rate);
  }
  detail::scale_to_rms(x, std::pow(10.0, -23.0 / 20.0));
  return {std::move(x), rate};
}

enum class ToyNoise { white, pink, brown, hum };

inline const char* to_string(ToyNoise k) {
  switch (k) {
    case ToyNoise::white: return "white";
    case ToyNoise::pink: return "pink";
    case ToyNoise::brown: return "brown";
    case ToyNoise::hum: return "hum";
  }
  return "?";
}

inline Waveform toy_noise(ToyNoise kind, std::uint64_t seed, double seconds, int rate = kPipelineRate) {
  require(seconds > 0.0, ErrorKind::config, "toy noise: duration must be positive");
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  std::vector<double> x(n);
  switch (kind) {
    case ToyNoise::white:
      for (double& v : x) v = rng.normal();
      break;
    case ToyNoise::pink: {
      // Paul Kellet's economy pink filter.
      double b0 = 0, b1 = 0, b2 = 0;
      for (double& v : x) {
        const double w = rng.normal();
        b0 = 0.99765 * b0 + w * 0.0990460;
        b1 = 0.96300 * b1 + w * 0.2965164;
        b2 = 0.57000 * b2 + w * 1.0526913;
        v = b0 + b1 + b2 + w * 0.1848;
      }
      break;
    }
    case ToyNoise::brown: {
      double acc = 0.0;
      for (double& v : x) {
        acc = 0.995 * acc + rng.normal();
        v = acc;
      }
      break;
    }
    case ToyNoise::hum: {
      const double f = rng.bernoulli(0.5) ? 50.0 : 60.0;
      std::array<double, 8> amp{}, ph{};
      for (std::size_t h = 0; h < amp.size(); ++h) {
        amp[h] = rng.uniform(0.2, 1.0) / static_cast<double>(h + 1);
        ph[h] = rng.uniform(0.0, 2.0 * M_PI);
      }
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.05 * rng.normal();
        for (std::size_t h = 0; h < amp.size(); ++h)
          s += amp[h] * std::sin(2.0 * M_PI * f * static_cast<double>(h + 1) * static_cast<double>(i) / rate + ph[h]);
        x[i] = s;
      }
      break;
    }
  }
  detail::scale_to_rms(x, std::pow(10.0, -23.0 / 20.0));
  return {std::move(x), rate};
}

struct ToyCorpusConfig {
  int speakers = 2;
  int utterances_per_speaker = 40;
  double utterance_seconds = 3.0;
  int noise_clips_per_kind = 3;
  double noise_seconds = 4.0;
  int rirs = 8;
  double rt60_low = 0.2;
  double rt60_high = 0.7;
  std::uint64_t seed = 0;

  void validate() const {
    require(speakers >= 2, ErrorKind::config, "toy corpus: need at least 2 speakers");
    require(utterances_per_speaker > 0 && noise_clips_per_kind > 0 && rirs > 0, ErrorKind::config,
            "toy corpus: counts must be positive");
    require(utterance_seconds > 0.1 && noise_seconds > 0.1, ErrorKind::config, "toy corpus: durations too short");
    require(rt60_low > 0.0 && rt60_high >= rt60_low, ErrorKind::config, "toy corpus: bad rt60 range");
  }
};

struct ToyCorpus {
  MemoryCorpus speech;
  MemoryCorpus noise;
  MemoryCorpus rirs;
};

/// Speech names carry the speaker: "spk<s>_utt<u>".
inline ToyCorpus make_toy_corpus(const ToyCorpusConfig& cfg) {
  cfg.validate();
  ToyCorpus c;
  const std::uint64_t speech_seed = derive_seed(cfg.seed, 1);
  const std::uint64_t noise_seed = derive_seed(cfg.seed, 2);
  const std::uint64_t rir_seed = derive_seed(cfg.seed, 3);
  for (int s = 0; s < cfg.speakers; ++s) {
    const ToySpeaker spk = toy_speaker(s);
    for (int u = 0; u < cfg.utterances_per_speaker; ++u) {
      const auto id = static_cast<std::uint64_t>(s * cfg.utterances_per_speaker + u);
      c.speech.add(toy_utterance(derive_seed(speech_seed, id), spk, cfg.utterance_seconds),
                   "spk" + std::to_string(s) + "_utt" + std::to_string(u));
    }
  }
  const ToyNoise kinds[] = {ToyNoise::white, ToyNoise::pink, ToyNoise::brown, ToyNoise::hum};
  std::uint64_t k = 0;
  for (ToyNoise kind : kinds)
    for (int i = 0; i < cfg.noise_clips_per_kind; ++i, ++k)
      c.noise.add(toy_noise(kind, derive_seed(noise_seed, k), cfg.noise_seconds),
                  std::string(to_string(kind)) + "_" + std::to_string(i));
  Rng rng(rir_seed);
  for (int i = 0; i < cfg.rirs; ++i) {
    const double rt60 = rng.uniform(cfg.rt60_low, cfg.rt60_high);
    const auto rir = synthetic_rir(rt60, derive_seed(rir_seed, static_cast<std::uint64_t>(i) + 1));
    c.rirs.add(Waveform{rir.taps, rir.sample_rate}, "rir_" + std::to_string(i));
  }
  return c;
}

}  // namespace dryflow
