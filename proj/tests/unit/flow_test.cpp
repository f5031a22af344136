// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "dryflow/flow/train.hpp"
#include "dryflow/mixture/toy_corpus.hpp"

namespace dryflow::flow {
namespace {

MatrixD random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Rng rng(seed);
  return gaussian_like<double>(r, c, rng);
}

BackboneConfig tiny_config(bool zero_init = true) {
  BackboneConfig c;
  c.layers = 2;
  c.heads = 4;
  c.hidden = 32;
  c.ffn = 48;
  c.mel_bins = 100;
  c.phonetic_dim = 16;
  c.proj_dim = 8;
  c.time_dim = 16;
  c.zero_init = zero_init;
  return c;
}

ConditionBundle random_condition(Eigen::Index frames, int phon_dim, std::uint64_t seed) {
  Rng rng(seed);
  auto [mc, mn] = build_infilling_masks(rng, frames);
  return assemble_condition(random_matrix(frames, phon_dim, seed + 1), random_matrix(frames, 100, seed + 2),
                            random_matrix(frames, 100, seed + 3), mc, mn);
}

TEST(SampleTime, UniformMeanAndRange) {
  Rng rng(1);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double t = sample_time(rng);
    ASSERT_GE(t, 0.0);
    ASSERT_LE(t, 1.0);
    sum += t;
  }
  EXPECT_NEAR(sum / 10000.0, 0.5, 0.01);
  Rng a(7), b(7);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_time(a), sample_time(b));
}

TEST(Interpolate, EndpointsAreExact) {
  const MatrixD x0 = random_matrix(7, 100, 1), x1 = random_matrix(7, 100, 2);
  EXPECT_EQ(interpolate(x0, x1, 0.0), x0);
  EXPECT_EQ(interpolate(x0, x1, 1.0), x1);
}

TEST(Interpolate, Midpoint) {
  const MatrixD m = interpolate<double>(MatrixD::Zero(3, 5), MatrixD::Constant(3, 5, 2.0), 0.5);
  EXPECT_EQ(m, MatrixD::Ones(3, 5));
}

TEST(Interpolate, RejectsBadInput) {
  EXPECT_THROW(interpolate<double>(MatrixD::Zero(3, 5), MatrixD::Zero(3, 4), 0.5), Error);
  EXPECT_THROW(interpolate<double>(MatrixD::Zero(3, 5), MatrixD::Zero(3, 5), 1.5), Error);
}

TEST(VelocityTarget, SimpleCases) {
  const MatrixD x = random_matrix(4, 6, 3);
  EXPECT_EQ(velocity_target(x, x), MatrixD::Zero(4, 6));
  EXPECT_EQ(velocity_target<double>(MatrixD::Zero(4, 6), x), x);
  EXPECT_THROW(velocity_target<double>(MatrixD::Zero(4, 6), MatrixD::Zero(6, 4)), Error);
}

TEST(VelocityTarget, MatchesFiniteDifferenceOfPath) {
  const MatrixD x0 = random_matrix(10, 100, 4), x1 = random_matrix(10, 100, 5);
  const MatrixD v = velocity_target(x0, x1);
  const double h = 1e-4;
  for (double t : {0.1, 0.37, 0.5, 0.9}) {
    const MatrixD fd = (interpolate(x0, x1, t + h) - interpolate(x0, x1, t - h)) / (2 * h);
    EXPECT_LE((fd - v).cwiseAbs().maxCoeff(), 1e-8) << t;
  }
}

TEST(InfillingMasks, FullRatioMasksEverything) {
  Rng rng(1);
  const auto [c, n] = build_infilling_masks(rng, 100, MaskRanges{1.0, 1.0, 1.0, 1.0});
  EXPECT_EQ(c.count(), 100);
  EXPECT_EQ(n.count(), 100);
}

TEST(InfillingMasks, RatioMeansAndContiguity) {
  Rng rng(2);
  double clean = 0.0, noisy = 0.0;
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    const auto [c, n] = build_infilling_masks(rng, 200);
    ASSERT_TRUE(c.contiguous());
    ASSERT_TRUE(n.contiguous());
    ASSERT_EQ(c.ratio(), static_cast<double>(c.count()) / 200.0);
    clean += c.ratio();
    noisy += n.ratio();
  }
  EXPECT_NEAR(clean / draws, 0.85, 0.01);
  EXPECT_NEAR(noisy / draws, 0.75, 0.01);
}

TEST(InfillingMasks, RealizedRatioIsRoundedRequest) {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    Rng probe = rng.fork(1);
    const double r = probe.uniform(0.7, 1.0);
    const auto [c, n] = build_infilling_masks(rng, 37);
    EXPECT_EQ(c.count(), std::llround(37 * r));
  }
}

TEST(InfillingMasks, StreamsAreIndependent) {
  Rng a(5), b(5);
  const auto [c1, n1] = build_infilling_masks(a, 80);
  const auto [c2, n2] = build_infilling_masks(b, 80, MaskRanges{0.7, 1.0, 0.1, 0.2});
  EXPECT_EQ(c1.missing, c2.missing);
  EXPECT_NE(n1.missing, n2.missing);
}

TEST(InfillingMasks, StartOffsetsCoverValidPositions) {
  Rng rng(6);
  std::vector<int> first(11, 0);
  for (int i = 0; i < 5000; ++i) {
    const auto m = contiguous_mask(rng, 20, 0.5);
    const auto it = std::find(m.missing.begin(), m.missing.end(), true);
    ++first[static_cast<std::size_t>(it - m.missing.begin())];
  }
  for (int c : first) EXPECT_NEAR(c, 5000.0 / 11.0, 90.0);
}

TEST(InfillingMasks, TooFewFramesFail) {
  Rng rng(1);
  EXPECT_THROW(build_infilling_masks(rng, 1), Error);
}

TEST(AssembleCondition, InferenceLayoutZeroesCleanContext) {
  const MatrixD clean = random_matrix(12, 100, 1);
  const auto c = assemble_condition(random_matrix(12, 16, 2), random_matrix(12, 100, 3), clean,
                                    InfillingMask::all(12), InfillingMask::none(12));
  EXPECT_EQ(c.clean_mel_context, MatrixD::Zero(12, 100));
  EXPECT_EQ(c.noisy_mel, random_matrix(12, 100, 3));
}

TEST(AssembleCondition, ZeroProjectionGivesZeros) {
  const auto c = assemble_condition(random_matrix(5, 1024, 1), random_matrix(5, 100, 2), random_matrix(5, 100, 3),
                                    InfillingMask::none(5), InfillingMask::none(5), MatrixD::Zero(1024, 512));
  EXPECT_EQ(c.phonetic_projected, MatrixD::Zero(5, 512));
  EXPECT_EQ(c.phonetic_projected.cols() + c.noisy_mel.cols() + c.clean_mel_context.cols(), 712);
}

TEST(AssembleCondition, MaskedFramesAreExactlyZero) {
  const auto c = assemble_condition(random_matrix(10, 4, 1), random_matrix(10, 100, 2), random_matrix(10, 100, 3),
                                    InfillingMask::span(10, 2, 3), InfillingMask::span(10, 6, 2));
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(c.clean_mel_context.row(i).isZero(0.0), i >= 2 && i < 5) << i;
    EXPECT_EQ(c.noisy_mel.row(i).isZero(0.0), i >= 6 && i < 8) << i;
  }
  EXPECT_EQ(c.phonetic, random_matrix(10, 4, 1));
}

TEST(AssembleCondition, FrameMismatchFails) {
  EXPECT_THROW(assemble_condition(random_matrix(9, 4, 1), random_matrix(10, 100, 2), random_matrix(10, 100, 3),
                                  InfillingMask::none(10), InfillingMask::none(10)),
               Error);
}

TEST(Backbone, OutputShapeFollowsInput) {
  const FlowModel<double> model(tiny_config(false), 1);
  for (Eigen::Index frames : {10, 50, 173}) {
    const auto cond = random_condition(frames, 16, 3);
    const MatrixD v = model.velocity(random_matrix(frames, 100, 4), 0.3, cond);
    EXPECT_EQ(v.rows(), frames);
    EXPECT_EQ(v.cols(), 100);
    EXPECT_TRUE(v.allFinite());
  }
}

TEST(Backbone, DeterministicInEvaluation) {
  const FlowModel<float> model(tiny_config(false), 2);
  const auto cond = random_condition(20, 16, 3);
  const MatrixD x = random_matrix(20, 100, 5);
  EXPECT_EQ(model.velocity(x, 0.5, cond), model.velocity(x, 0.5, cond));
}

TEST(Backbone, ZeroInitStartsAtZeroVelocity) {
  const FlowModel<double> model(tiny_config(true), 2);
  const auto cond = random_condition(20, 16, 3);
  EXPECT_EQ(model.velocity(random_matrix(20, 100, 5), 0.5, cond), MatrixD::Zero(20, 100));
}

TEST(Backbone, ShapeErrors) {
  const FlowModel<double> model(tiny_config(false), 2);
  const auto cond = random_condition(20, 16, 3);
  EXPECT_THROW(model.velocity(random_matrix(21, 100, 5), 0.5, cond), Error);
  EXPECT_THROW(model.velocity(random_matrix(20, 80, 5), 0.5, cond), Error);
  EXPECT_THROW(model.velocity(random_matrix(20, 100, 5), 0.5, random_condition(20, 12, 3)), Error);
  BackboneConfig bad = tiny_config();
  bad.heads = 5;
  EXPECT_THROW(FlowModel<double>{bad}, Error);
}

TEST(Backbone, GradientsMatchCentralDifferences) {
  FlowModel<double> model(tiny_config(false), 3);
  const auto cond = random_condition(12, 16, 4);
  const MatrixD x = random_matrix(12, 100, 5);
  const double t = 0.42;
  auto objective = [&] {
    nn::Tape<double> tape;
    return nn::mean_all(model.forward(tape, tape.constant(x), t, cond)).value()(0, 0);
  };
  nn::Tape<double> tape;
  nn::Var<double> xin = tape.input(x);
  tape.backward(nn::mean_all(model.forward(tape, xin, t, cond)));
  nn::Gradients<double> g(model.params());
  tape.accumulate(model.params(), g);

  Rng rng(11);
  const double h = 1e-4;
  int checked = 0;
  for (int k = 0; k < 20; ++k) {
    const std::size_t p = rng.index(model.params().size());
    auto& w = model.params().value(p);
    const auto j = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(w.size())));
    const double orig = w.data()[j];
    w.data()[j] = orig + h;
    const double up = objective();
    w.data()[j] = orig - h;
    const double down = objective();
    w.data()[j] = orig;
    const double fd = (up - down) / (2 * h);
    const double an = g.values[p].data()[j];
    EXPECT_LE(std::abs(fd - an), 1e-4 * std::max(std::abs(fd), 1e-6)) << model.params().name(p);
    ++checked;
  }
  EXPECT_EQ(checked, 20);
  const double fdx = [&] {
    MatrixD xp = x, xm = x;
    xp(3, 7) += h;
    xm(3, 7) -= h;
    nn::Tape<double> a, b;
    return (nn::mean_all(model.forward(a, a.constant(xp), t, cond)).value()(0, 0) -
            nn::mean_all(model.forward(b, b.constant(xm), t, cond)).value()(0, 0)) /
           (2 * h);
  }();
  EXPECT_LE(std::abs(fdx - tape.grad(xin)(3, 7)), 1e-4 * std::abs(fdx));
}

TEST(MaskedCfmLoss, ZeroWhenEqual) {
  const MatrixD v = random_matrix(6, 100, 1);
  EXPECT_EQ(masked_cfm_loss(v, v, InfillingMask::span(6, 1, 3)), 0.0);
}

TEST(MaskedCfmLoss, UnmaskedPerturbationIsBitExactNoOp) {
  const MatrixD target = random_matrix(30, 100, 1);
  MatrixD pred = random_matrix(30, 100, 2);
  const auto mask = InfillingMask::span(30, 10, 12);
  const double base = masked_cfm_loss(pred, target, mask);
  pred.topRows(10) = random_matrix(10, 100, 3) * 1e6;
  pred.bottomRows(8).setConstant(-42.0);
  EXPECT_EQ(masked_cfm_loss(pred, target, mask), base);
}

TEST(MaskedCfmLoss, MatchesLoopOracle) {
  const MatrixD a = random_matrix(4, 100, 5), b = random_matrix(4, 100, 6);
  const auto mask = InfillingMask::span(4, 1, 2);
  double acc = 0.0;
  for (int i = 1; i < 3; ++i)
    for (int j = 0; j < 100; ++j) acc += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  EXPECT_NEAR(masked_cfm_loss(a, b, mask), acc / 200.0, 1e-12);
}

TEST(MaskedCfmLoss, EmptyMaskFails) {
  try {
    masked_cfm_loss(MatrixD::Zero(4, 100), MatrixD::Zero(4, 100), InfillingMask::none(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("no masked frames"), std::string::npos);
  }
}

TEST(Euler, ConstantFieldIsExact) {
  const MatrixD x0 = random_matrix(5, 100, 1), c = random_matrix(5, 100, 2);
  for (int n : {1, 8}) {
    const MatrixD out = euler_integrate(x0, n, [&](const MatrixD&, double) { return c; });
    EXPECT_LE((out - (x0 + c)).cwiseAbs().maxCoeff(), 1e-6) << n;
  }
}

TEST(Euler, TruePathFieldReachesEndpoint) {
  const MatrixD x0 = random_matrix(5, 100, 3), x1 = random_matrix(5, 100, 4);
  const MatrixD out = euler_integrate(x0, 8, [&](const MatrixD&, double) { return velocity_target(x0, x1); });
  EXPECT_LE((out - x1).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Euler, DecayFieldMatchesAnalyticIterate) {
  const MatrixD x0 = random_matrix(3, 100, 5);
  const auto field = [](const MatrixD& x, double) -> MatrixD { return -x; };
  const MatrixD coarse = euler_integrate(x0, 8, field);
  const MatrixD fine = euler_integrate(x0, 1024, field);
  const double q8 = std::pow(1.0 - 1.0 / 8.0, 8), q1024 = std::pow(1.0 - 1.0 / 1024.0, 1024);
  EXPECT_LE((coarse - q8 * x0).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((fine - q1024 * x0).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((fine - std::exp(-1.0) * x0).cwiseAbs().maxCoeff(), 1e-3 * x0.cwiseAbs().maxCoeff());
  EXPECT_LE(((coarse - fine) - (q8 - q1024) * x0).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Euler, RejectsZeroSteps) {
  EXPECT_THROW(euler_integrate(MatrixD::Zero(2, 2), 0, [](const MatrixD& x, double) { return x; }), Error);
}

std::vector<FlowExample> toy_examples(int n, int phon_dim, std::uint64_t seed) {
  const MelConfig mel;
  const MatrixD fb = mel_filterbank(mel);
  std::vector<FlowExample> out;
  for (int i = 0; i < n; ++i) {
    const Waveform clean = toy_utterance(seed + static_cast<std::uint64_t>(i), toy_speaker(i % 2), 0.6);
    const Waveform noise = toy_noise(ToyNoise::pink, seed + 100 + static_cast<std::uint64_t>(i), 0.6);
    const Waveform noisy = mix_at_snr(clean, noise, 0.0);
    FlowExample ex = prepare_example(noisy, &clean, nullptr, phon_dim, MelStats::identity(100), mel, fb);
    ex.clean = (ex.clean.array() + 5.0) / 3.0;
    ex.noisy = (ex.noisy.array() + 5.0) / 3.0;
    ex.phonetic = random_matrix(ex.noisy.rows(), phon_dim, seed + 200 + static_cast<std::uint64_t>(i));
    out.push_back(std::move(ex));
  }
  return out;
}

TEST(TrainStep, ZeroLearningRateKeepsParameters) {
  FlowModel<float> model(tiny_config(), 1);
  nn::AdamW<float> opt(model.params());
  const auto before = model.params().checksum();
  const double loss = train_step(model, opt, toy_examples(2, 16, 1), 9, 0.0, nn::OptimizerConfig{});
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_EQ(model.params().checksum(), before);
}

TEST(TrainStep, IsDeterministic) {
  const auto batch = toy_examples(2, 16, 2);
  auto run = [&] {
    FlowModel<float> model(tiny_config(), 1);
    nn::AdamW<float> opt(model.params());
    double loss = 0.0;
    for (int s = 0; s < 3; ++s) loss = train_step(model, opt, batch, derive_seed(4, s), 1e-3, nn::OptimizerConfig{});
    return std::pair{model.params().checksum(), loss};
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainStep, LossFallsOnSmallCorpus) {
  const auto data = toy_examples(4, 16, 3);
  FlowModel<float> model(tiny_config(), 1);
  nn::AdamW<float> opt(model.params());
  nn::OptimizerConfig oc;
  oc.steps = 150;
  oc.peak_lr = 2e-3;
  const double before = evaluation_loss(model, data, 99, {}, 4);
  for (int s = 1; s <= oc.steps; ++s) train_step(model, opt, data, derive_seed(5, s), oc.lr_at(s), oc);
  EXPECT_LT(evaluation_loss(model, data, 99, {}, 4), 0.8 * before);
}

TEST(TrainStep, WithoutMaskingUsesEveryFrame) {
  const auto data = toy_examples(1, 16, 4);
  const FlowModel<double> model(tiny_config(false), 1);
  FlowTrainConfig cfg;
  cfg.use_masking = false;
  Rng rng(3);
  nn::Tape<double> tape;
  const double loss = example_loss(tape, model, data[0], rng, cfg).value()(0, 0);
  Rng replay(3);
  const double t = sample_time(replay);
  const MatrixD x0 = gaussian_like<double>(data[0].clean.rows(), 100, replay);
  const auto cond = assemble_condition(data[0].phonetic, data[0].noisy, data[0].clean,
                                       InfillingMask::all(data[0].clean.rows()),
                                       InfillingMask::none(data[0].clean.rows()));
  const MatrixD v = model.velocity(interpolate(x0, data[0].clean, t), t, cond);
  EXPECT_NEAR(loss, (v - velocity_target(x0, data[0].clean)).squaredNorm() / static_cast<double>(v.size()), 1e-12);
}

TEST(FlowArtifact, CheckpointRoundTrip) {
  FlowArtifact<float> a{FlowModel<float>(tiny_config(false), 4)};
  a.stats = MelStats::estimate({random_matrix(20, 100, 1)});
  a.encoder_checksum = 1234567890123ULL;
  a.step = 17;
  a.train.use_semantic = false;
  const auto path = std::filesystem::temp_directory_path() / "dryflow_flow_rt.ckpt";
  a.save(path);
  const auto b = FlowArtifact<float>::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(b.model.config(), a.model.config());
  EXPECT_EQ(b.model.params().checksum(), a.model.params().checksum());
  EXPECT_EQ(b.stats.mean, a.stats.mean);
  EXPECT_EQ(b.encoder_checksum, a.encoder_checksum);
  EXPECT_EQ(b.step, 17);
  EXPECT_FALSE(b.train.use_semantic);
  const auto ex = toy_examples(1, 16, 5).front();
  EXPECT_EQ(enhance_mel(a.model, ex, a.stats, 4, 3), enhance_mel(b.model, ex, b.stats, 4, 3));
}

}  // namespace
}  // namespace dryflow::flow
