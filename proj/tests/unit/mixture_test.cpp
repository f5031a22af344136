// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "dryflow/mixture/simulate.hpp"
#include "dryflow/rng.hpp"

namespace dryflow {
namespace {

std::vector<double> gaussian(std::size_t n, std::uint64_t seed, double amp = 0.1) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = amp * rng.normal();
  return v;
}

double component_snr(const MixtureComponents& c) {
  return 10.0 * std::log10(mean_power(c.speech) / mean_power(c.noise));
}

TEST(ConvolveRir, UnitImpulseIsIdentity) {
  const Waveform x(gaussian(300, 1), 16000);
  const auto rir = RoomImpulseResponse::from_taps({1.0, 0.0, 0.0});
  EXPECT_EQ(convolve_rir(x, rir).samples, x.samples);
}

TEST(ConvolveRir, DelayedScaledImpulseIsCompensated) {
  const Waveform x(gaussian(400, 2), 16000);
  std::vector<double> taps(150, 0.0);
  taps[100] = 0.5;
  const auto rir = RoomImpulseResponse::from_taps(taps);
  EXPECT_EQ(rir.direct_path_index, 100u);
  const Waveform y = convolve_rir(x, rir);
  ASSERT_EQ(y.size(), x.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.samples[i], 0.5 * x.samples[i]);
}

TEST(ConvolveRir, MatchesNestedLoopOracle) {
  const auto x = gaussian(32, 3, 1.0);
  const auto h = gaussian(8, 4, 1.0);
  const auto rir = RoomImpulseResponse::from_taps(h);
  const Waveform y = convolve_rir(Waveform(x, 16000), rir);
  const std::size_t d = rir.direct_path_index;
  for (std::size_t n = 0; n < x.size(); ++n) {
    double acc = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
      const auto i = static_cast<std::ptrdiff_t>(n + d) - static_cast<std::ptrdiff_t>(k);
      if (i >= 0 && i < static_cast<std::ptrdiff_t>(x.size())) acc += h[k] * x[static_cast<std::size_t>(i)];
    }
    EXPECT_NEAR(y.samples[n], acc, 1e-10);
  }
}

TEST(ConvolveRir, FftPathMatchesDirectPath) {
  const auto x = gaussian(40000, 5);
  const auto rir = synthetic_rir(0.3, 6, 20);
  const auto fast = convolve_full(x, rir.taps);
  // spot-check against the direct sum
  for (std::size_t n : {0ul, 19ul, 20ul, 777ul, 30000ul, 44000ul}) {
    double acc = 0.0;
    for (std::size_t k = 0; k < rir.taps.size() && k <= n; ++k)
      if (n - k < x.size()) acc += rir.taps[k] * x[n - k];
    EXPECT_NEAR(fast[n], acc, 1e-10);
  }
}

TEST(ConvolveRir, Linearity) {
  const Waveform x(gaussian(3000, 7), 16000);
  const auto rir = synthetic_rir(0.1, 8, 5);
  Waveform ax = x;
  for (auto& v : ax.samples) v *= -2.5;
  const auto y = convolve_rir(x, rir), ay = convolve_rir(ax, rir);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(ay.samples[i], -2.5 * y.samples[i], 1e-10 * (1.0 + std::abs(ay.samples[i])));
}

TEST(ConvolveRir, Errors) {
  RoomImpulseResponse zero;
  zero.taps = {0.0, 0.0};
  EXPECT_THROW(convolve_rir(Waveform(gaussian(10, 1), 16000), zero), Error);
  EXPECT_THROW(RoomImpulseResponse::from_taps({0.0, 0.0}), Error);
  EXPECT_THROW(convolve_rir(Waveform(gaussian(10, 1), 8000), RoomImpulseResponse::from_taps({1.0})), Error);
}

TEST(TruncateRirEarly, ShortRirUnchanged) {
  const auto rir = RoomImpulseResponse::from_taps({1.0, 0.3, -0.2, 0.1});
  EXPECT_EQ(truncate_rir_early(rir, 50.0).taps, rir.taps);
}

TEST(TruncateRirEarly, KeepsExactly800TapsAt50ms) {
  const auto rir = synthetic_rir(1.0, 3, 0);
  ASSERT_EQ(rir.taps.size(), 16000u);
  const auto early = truncate_rir_early(rir, 50.0);
  for (std::size_t i = 0; i < 800; ++i) EXPECT_EQ(early.taps[i], rir.taps[i]);
  for (std::size_t i = 800; i < early.taps.size(); ++i) ASSERT_EQ(early.taps[i], 0.0);
}

TEST(TruncateRirEarly, MeasuredFromDirectPath) {
  std::vector<double> taps(2000, 0.0);
  taps[3] = 0.05;  // pre-direct tap survives
  taps[100] = 1.0;
  taps[100 + 16 * 60] = 0.4;  // 60 ms after the direct path
  taps[100 + 16 * 40] = 0.2;  // 40 ms
  const auto early = truncate_rir_early(RoomImpulseResponse::from_taps(taps), 50.0);
  EXPECT_EQ(early.taps[3], 0.05);
  EXPECT_EQ(early.taps[100], 1.0);
  EXPECT_EQ(early.taps[100 + 16 * 40], 0.2);
  EXPECT_EQ(early.taps[100 + 16 * 60], 0.0);
}

TEST(TruncateRirEarly, WindowLimits) {
  const Waveform x(gaussian(4000, 9), 16000);
  const auto rir = synthetic_rir(0.2, 10, 30);
  // huge window: full reverberant signal
  EXPECT_EQ(convolve_rir(x, truncate_rir_early(rir, 1e6)).samples, convolve_rir(x, rir).samples);
  // vanishing window: direct path only -> scaled dry signal (direct tap is 1)
  const auto direct = convolve_rir(x, truncate_rir_early(rir, 1e-3));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(direct.samples[i], x.samples[i], 1e-12);
}

TEST(MixAtSnr, ZeroDbEqualPowers) {
  const auto s = gaussian(5000, 1, 0.3), n = gaussian(5000, 2, 0.01);
  const auto c = mix_components(s, n, 0.0);
  EXPECT_NEAR(mean_power(c.noise) / mean_power(c.speech), 1.0, 1e-9);
}

TEST(MixAtSnr, TenDbMeasured) {
  const auto c = mix_components(gaussian(5000, 3), gaussian(5000, 4, 2.0), 10.0);
  EXPECT_NEAR(component_snr(c), 10.0, 1e-6);
  const Waveform mixed = mix_at_snr(Waveform(gaussian(5000, 3), 16000), Waveform(gaussian(5000, 4, 2.0), 16000), 10.0);
  for (std::size_t i = 0; i < mixed.size(); ++i) EXPECT_DOUBLE_EQ(mixed.samples[i], c.speech[i] + c.noise[i]);
}

TEST(MixAtSnr, TwentyDbGainRatio) {
  const auto s = gaussian(5000, 5), n = gaussian(5000, 6);
  EXPECT_NEAR(mix_components(s, n, -5.0).gain / mix_components(s, n, 15.0).gain, 10.0, 1e-12);
}

TEST(MixAtSnr, DegenerateInputs) {
  const std::vector<double> zeros(100, 0.0);
  const auto n = gaussian(100, 1);
  EXPECT_THROW(mix_components(zeros, n, 0.0), Error);
  EXPECT_THROW(mix_components(n, zeros, 0.0), Error);
  EXPECT_THROW(mix_components(n, gaussian(99, 1), 0.0), Error);
}

struct ToyCorpora {
  MemoryCorpus speech, noise, rirs;
};

ToyCorpora toy_corpora() {
  ToyCorpora c;
  for (int i = 0; i < 4; ++i) {
    auto s = gaussian(16000 + 3000 * i, 100 + i, 0.2);
    for (std::size_t k = 0; k < s.size(); ++k) s[k] *= 0.5 + 0.5 * std::sin(0.001 * k * (i + 1));
    c.speech.add(Waveform(s, 16000), "spk" + std::to_string(i));
  }
  c.speech.add(Waveform(gaussian(4000, 99), 16000), "short");
  c.noise.add(Waveform(gaussian(5000, 200, 0.5), 16000), "short-noise");
  c.noise.add(Waveform(gaussian(40000, 201, 0.05), 16000), "long-noise");
  for (int i = 0; i < 3; ++i) {
    const auto r = synthetic_rir(0.2 + 0.2 * i, 300 + i, 10 * i);
    c.rirs.add(Waveform(r.taps, 16000), "rir" + std::to_string(i));
  }
  return c;
}

MixtureConfig toy_config() {
  MixtureConfig cfg;
  cfg.segment_seconds = 0.5;
  return cfg;
}

TEST(SampleTrainingPair, DeterministicForSeed) {
  const auto c = toy_corpora();
  const auto a = sample_training_pair(42, c.speech, c.noise, c.rirs, toy_config());
  const auto b = sample_training_pair(42, c.speech, c.noise, c.rirs, toy_config());
  EXPECT_EQ(a.noisy.samples, b.noisy.samples);
  EXPECT_EQ(a.target.samples, b.target.samples);
  EXPECT_EQ(a.spec.snr_db, b.spec.snr_db);
  EXPECT_EQ(a.rir_index, b.rir_index);
  EXPECT_EQ(a.noisy.size(), 8000u);
  EXPECT_EQ(a.target.size(), a.noisy.size());
}

TEST(SampleTrainingPair, DrawStatistics) {
  const auto c = toy_corpora();
  MixtureConfig cfg = toy_config();
  cfg.segment_seconds = 0.1;
  int reverbed = 0;
  double snr_sum = 0.0;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    const auto p = sample_training_pair(static_cast<std::uint64_t>(s), c.speech, c.noise, c.rirs, cfg);
    reverbed += p.spec.apply_reverb;
    snr_sum += p.spec.snr_db;
    ASSERT_GE(p.spec.snr_db, -5.0);
    ASSERT_LE(p.spec.snr_db, 15.0);
    ASSERT_NEAR(component_snr(p.components), p.spec.snr_db, 1e-6);
  }
  EXPECT_NEAR(static_cast<double>(reverbed) / draws, 0.80, 0.01);
  EXPECT_NEAR(snr_sum / draws, 5.0, 0.15);
}

TEST(SampleTrainingPair, DryTargetIndependentOfRir) {
  const auto c = toy_corpora();
  MemoryCorpus other_rirs;
  other_rirs.add(Waveform(synthetic_rir(0.9, 7, 55).taps, 16000), "x");
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = sample_training_pair(s, c.speech, c.noise, c.rirs, toy_config());
    const auto b = sample_training_pair(s, c.speech, c.noise, other_rirs, toy_config());
    MixtureConfig dry_only = toy_config();
    dry_only.reverb_prob = 0.0;
    const auto d = sample_training_pair(s, c.speech, c.noise, c.rirs, dry_only);
    EXPECT_EQ(a.target.samples, b.target.samples);
    EXPECT_EQ(a.target.samples, d.target.samples);
  }
}

TEST(SampleTrainingPair, EarlyReflectionTargetUsesTruncatedRir) {
  const auto c = toy_corpora();
  MixtureConfig cfg = toy_config();
  cfg.target_mode = TargetMode::early_reflection;
  cfg.reverb_prob = 1.0;
  const auto p = sample_training_pair(5, c.speech, c.noise, c.rirs, cfg);
  ASSERT_TRUE(p.rir_index.has_value());
  MixtureConfig dry_cfg = cfg;
  dry_cfg.target_mode = TargetMode::dry;
  const auto dry = sample_training_pair(5, c.speech, c.noise, c.rirs, dry_cfg);
  const auto rir = RoomImpulseResponse::from_waveform(c.rirs.load(*p.rir_index));
  const auto expected = convolve_rir(dry.target, truncate_rir_early(rir, 50.0));
  EXPECT_EQ(p.target.samples, expected.samples);
  EXPECT_EQ(p.noisy.samples, dry.noisy.samples);
}

TEST(SampleTrainingPair, AlignmentPeakAtLagZero) {
  const auto c = toy_corpora();
  MixtureConfig cfg = toy_config();
  cfg.reverb_prob = 1.0;
  cfg.snr_low = cfg.snr_high = 20.0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto p = sample_training_pair(s, c.speech, c.noise, c.rirs, cfg);
    int best_lag = 0;
    double best = -1e300;
    for (int lag = -200; lag <= 200; ++lag) {
      double acc = 0.0;
      for (std::size_t i = 0; i < p.target.size(); ++i) {
        const auto j = static_cast<std::ptrdiff_t>(i) + lag;
        if (j >= 0 && j < static_cast<std::ptrdiff_t>(p.noisy.size()))
          acc += p.target.samples[i] * p.noisy.samples[static_cast<std::size_t>(j)];
      }
      if (acc > best) best = acc, best_lag = lag;
    }
    EXPECT_EQ(best_lag, 0) << "seed " << s;
  }
}

TEST(SampleTrainingPair, ClipGuardKeepsTargetAndSnr) {
  MemoryCorpus speech, noise, rirs;
  speech.add(Waveform(gaussian(8000, 1, 0.9), 16000), "loud");
  noise.add(Waveform(gaussian(8000, 2, 0.9), 16000), "loud-noise");
  MixtureConfig cfg = toy_config();
  cfg.reverb_prob = 0.0;
  cfg.snr_low = cfg.snr_high = -5.0;
  const auto p = sample_training_pair(1, speech, noise, rirs, cfg);
  EXPECT_LE(peak_abs(p.noisy.view()), 1.0 + 1e-12);
  EXPECT_NEAR(component_snr(p.components), -5.0, 1e-6);
  const auto utt = speech.load(0);
  EXPECT_LE(peak_abs(p.target.view()), peak_abs(utt.view()));
}

TEST(SampleTrainingPair, ShortUtterancesExhaustRetries) {
  MemoryCorpus speech, noise, rirs;
  speech.add(Waveform(gaussian(100, 1), 16000), "tiny");
  noise.add(Waveform(gaussian(100, 2), 16000), "n");
  EXPECT_THROW(sample_training_pair(1, speech, noise, rirs, toy_config()), Error);
  MemoryCorpus empty;
  EXPECT_THROW(sample_training_pair(1, empty, noise, rirs, toy_config()), Error);
}

}  // namespace
}  // namespace dryflow
