// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <filesystem>
#include <vector>

#include <gtest/gtest.h>

#include "dryflow/mixture/toy_corpus.hpp"
#include "dryflow/semantic/drd.hpp"

namespace dryflow::semantic {
namespace {

ToyEncoderConfig small_config() {
  ToyEncoderConfig c;
  c.dim = 32;
  c.filters = 24;
  c.layers = 1;
  c.heads = 4;
  c.ffn = 64;
  return c;
}

Waveform utterance(std::uint64_t seed, double seconds = 2.0, int speaker = 0) {
  return toy_utterance(seed, toy_speaker(speaker), seconds);
}

double cosine(const MatrixD& a, const MatrixD& b) {
  const Eigen::Index n = std::min(a.rows(), b.rows());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) total += a.row(i).dot(b.row(i)) / (a.row(i).norm() * b.row(i).norm());
  return total / static_cast<double>(n);
}

TEST(ToyEncoder, TwoSecondsGiveHundredFrames) {
  const ToyEncoder<float> enc(small_config(), 1);
  const auto rep = enc.encode(utterance(1));
  EXPECT_EQ(rep.frames(), 100);
  EXPECT_EQ(rep.dim(), 32);
  EXPECT_DOUBLE_EQ(rep.frame_rate, 50.0);
  EXPECT_TRUE(rep.values.allFinite());
}

TEST(ToyEncoder, FrameCountMatchesLogMel) {
  const ToyEncoder<float> enc(small_config(), 1);
  for (double sec : {0.08, 0.5, 1.013, 1.77}) {
    const Waveform w = utterance(3, sec);
    EXPECT_EQ(enc.encode(w).frames(), log_mel(w, MelConfig{}).values.rows()) << sec;
  }
}

TEST(ToyEncoder, DeterministicInEvaluation) {
  const ToyEncoder<float> enc(small_config(), 2);
  const Waveform w = utterance(4);
  EXPECT_EQ(enc.encode(w).values, enc.encode(w).values);
}

TEST(ToyEncoder, NotGainInvariant) {
  const ToyEncoder<float> enc(small_config(), 2);
  Waveform w = utterance(5);
  const MatrixD a = enc.encode(w).values;
  for (double& s : w.samples) s *= 0.5;
  EXPECT_GT((a - enc.encode(w).values).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(ToyEncoder, TooShortInputFails) {
  const ToyEncoder<float> enc(small_config(), 2);
  EXPECT_THROW(enc.encode(Waveform(std::vector<double>(100, 0.1), 16000)), Error);
  EXPECT_THROW(enc.encode(Waveform(std::vector<double>(4000, 0.1), 8000)), Error);
}

TEST(ToyEncoder, SelfSimilarityExceedsCrossSimilarity) {
  const ToyEncoder<float> enc(small_config(), 3);
  const MatrixD a = enc.encode(utterance(10)).values;
  const MatrixD b = enc.encode(utterance(11, 2.0, 1)).values;
  EXPECT_NEAR(cosine(a, a), 1.0, 1e-12);
  EXPECT_LT(cosine(a, b), cosine(a, a));
}

TEST(ToyEncoder, GradientsMatchFiniteDifferences) {
  ToyEncoderConfig cfg = small_config();
  cfg.dim = 8;
  cfg.filters = 6;
  cfg.heads = 2;
  cfg.ffn = 12;
  ToyEncoder<double> enc(cfg, 4);
  const Waveform w = utterance(6, 0.2);
  const MatrixD frames = enc.frames(w);
  Rng rng(9);
  const MatrixD target = nn::gaussian_init<double>(frames.rows(), cfg.dim, rng, 1.0);
  std::vector<bool> mask(static_cast<std::size_t>(frames.rows()), false);
  mask[2] = mask[3] = true;
  auto loss = [&] {
    nn::Tape<double> tape;
    return nn::mse(enc.forward(tape, frames, &mask), target).value()(0, 0);
  };
  nn::Tape<double> tape;
  tape.backward(nn::mse(enc.forward(tape, frames, &mask), target));
  nn::Gradients<double> g(enc.params()), ga(enc.aux());
  tape.accumulate(enc.params(), g);
  tape.accumulate(enc.aux(), ga);
  int checked = 0;
  for (auto [store, grads] : {std::pair{&enc.params(), &g}, std::pair{&enc.aux(), &ga}}) {
    for (std::size_t i = 0; i < store->size(); ++i) {
      if (store->name(i).rfind("head", 0) == 0) continue;
      auto& p = store->value(i);
      const Eigen::Index k = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(p.size())));
      const double orig = p.data()[k];
      const double h = 1e-6 * std::max(1.0, std::abs(orig));
      p.data()[k] = orig + h;
      const double up = loss();
      p.data()[k] = orig - h;
      const double down = loss();
      p.data()[k] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = grads->values[i].data()[k];
      EXPECT_LE(std::abs(fd - an), 1e-5 * std::max(1e-3, std::abs(fd) + std::abs(an))) << store->name(i);
      ++checked;
    }
  }
  EXPECT_GT(checked, 15);
}

TEST(ToyEncoder, CheckpointRoundTripIsBitExact) {
  const ToyEncoder<float> enc(small_config(), 7);
  const auto path = std::filesystem::temp_directory_path() / "dryflow_encoder_rt.ckpt";
  enc.save(path, 12);
  const auto back = ToyEncoder<float>::load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(back.config(), enc.config());
  EXPECT_EQ(back.checksum(), enc.checksum());
  const Waveform w = utterance(8);
  EXPECT_EQ(back.encode(w).values, enc.encode(w).values);
}

TEST(ToyEncoder, CheckpointOfWrongKindIsRefused) {
  nn::Checkpoint c;
  c.kind = nn::CheckpointKind::flow;
  EXPECT_THROW(ToyEncoder<float>::from_checkpoint(c), Error);
}

TEST(LinearFrameEncoder, IsLinearInTheInput) {
  const auto enc = LinearFrameEncoder::random(16, 3);
  Waveform w = utterance(2, 1.0);
  const MatrixD a = enc.encode(w).values;
  for (double& s : w.samples) s *= -2.0;
  EXPECT_LT((enc.encode(w).values + 2.0 * a).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(a.rows(), 50);
}

TEST(DrdLoss, IdenticalInputsGiveZero) {
  Rng rng(1);
  const MatrixD a = nn::gaussian_init<double>(5, 7, rng, 1.0);
  EXPECT_EQ(drd_loss(a, a), 0.0);
}

TEST(DrdLoss, OnesAgainstZerosGiveOne) {
  for (auto [r, c] : {std::pair{1, 1}, std::pair{3, 9}, std::pair{100, 64}})
    EXPECT_DOUBLE_EQ(drd_loss(MatrixD::Ones(r, c), MatrixD::Zero(r, c)), 1.0);
}

TEST(DrdLoss, MatchesScalarLoopOracle) {
  Rng rng(2);
  const MatrixD s = nn::gaussian_init<double>(3, 4, rng, 1.0);
  const MatrixD t = nn::gaussian_init<double>(3, 4, rng, 1.0);
  double acc = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) acc += (s(i, j) - t(i, j)) * (s(i, j) - t(i, j));
  EXPECT_NEAR(drd_loss(PhoneticRepresentation{s, 50.0}, PhoneticRepresentation{t, 50.0}), acc / 12.0, 1e-12);
}

TEST(DrdLoss, ShapeMismatchFails) {
  EXPECT_THROW(drd_loss(MatrixD::Zero(3, 4), MatrixD::Zero(4, 3)), Error);
}

PairStream noiseless_pairs(double seconds = 1.0) {
  return [seconds](std::int64_t step) {
    TrainingPair p;
    p.target = utterance(1000 + static_cast<std::uint64_t>(step % 8), seconds, static_cast<int>(step % 2));
    p.noisy = p.target;
    return std::vector<TrainingPair>{p};
  };
}

nn::OptimizerConfig drd_opt(std::int64_t steps) {
  nn::OptimizerConfig o;
  o.steps = steps;
  o.peak_lr = 2e-3;
  o.final_lr = 1e-5;
  o.warmup_fraction = 0.05;
  return o;
}

TEST(DrdFinetune, ZeroStepsLeaveStateUnchanged) {
  DRDState<float> st(ToyEncoder<float>(small_config(), 1), ToyEncoder<float>(small_config(), 2), 5);
  const auto before = st.student.checksum();
  drd_finetune(st, noiseless_pairs(), 0, drd_opt(10));
  EXPECT_EQ(st.student.checksum(), before);
  EXPECT_EQ(st.step, 0);
  EXPECT_TRUE(st.loss_history.empty());
}

TEST(DrdFinetune, DimMismatchIsRejected) {
  ToyEncoderConfig other = small_config();
  other.dim = 16;
  EXPECT_THROW(DRDState<float>(ToyEncoder<float>(small_config(), 1), ToyEncoder<float>(other, 2)), Error);
}

TEST(DrdFinetune, NoiselessPairsConvergeAndTeacherStaysFrozen) {
  DRDState<float> st(ToyEncoder<float>(small_config(), 1), ToyEncoder<float>(small_config(), 2), 5);
  const auto teacher = st.teacher.checksum();
  const std::int64_t steps = 300;
  drd_finetune(st, noiseless_pairs(), steps, drd_opt(steps));
  ASSERT_EQ(st.loss_history.size(), static_cast<std::size_t>(steps));
  EXPECT_EQ(st.teacher.checksum(), teacher);
  EXPECT_LT(st.loss_history.back(), 0.1 * st.loss_history.front());
}

TEST(DrdFinetune, PretrainedInitStartsAtZeroLoss) {
  const ToyEncoder<float> enc(small_config(), 1);
  auto st = DRDState<float>::from_pretrained(enc);
  drd_finetune(st, noiseless_pairs(), 1, drd_opt(10));
  EXPECT_EQ(st.loss_history.front(), 0.0);
}

TEST(DrdFinetune, ResumeMatchesUninterruptedRun) {
  const ToyEncoder<float> teacher(small_config(), 1), student(small_config(), 2);
  DRDState<float> straight(teacher, student, 5);
  drd_finetune(straight, noiseless_pairs(0.5), 8, drd_opt(8));

  DRDState<float> first(teacher, student, 5);
  drd_finetune(first, noiseless_pairs(0.5), 4, drd_opt(8));
  const auto bytes = first.resume_checkpoint().serialize();
  DRDState<float> resumed(teacher, ToyEncoder<float>(small_config(), 99), 0);
  resumed.restore(nn::Checkpoint::deserialize(bytes));
  drd_finetune(resumed, noiseless_pairs(0.5), 4, drd_opt(8));

  EXPECT_EQ(resumed.student.checksum(), straight.student.checksum());
  EXPECT_EQ(resumed.loss_history, straight.loss_history);
  EXPECT_EQ(resumed.step, 8);
}

TEST(DrdFinetune, ResumeAgainstOtherTeacherFails) {
  DRDState<float> a(ToyEncoder<float>(small_config(), 1), ToyEncoder<float>(small_config(), 2));
  DRDState<float> b(ToyEncoder<float>(small_config(), 3), ToyEncoder<float>(small_config(), 2));
  EXPECT_THROW(b.restore(a.resume_checkpoint()), Error);
}

TEST(DrdFinetune, NonFiniteLossAbortsWithStepAndSeed) {
  DRDState<float> st(ToyEncoder<float>(small_config(), 1), ToyEncoder<float>(small_config(), 2), 77);
  PairStream bad = [](std::int64_t) {
    TrainingPair p;
    p.target = utterance(1, 0.5);
    p.noisy = p.target;
    p.noisy.samples[3000] = std::nan("");
    return std::vector<TrainingPair>{p};
  };
  try {
    drd_finetune(st, bad, 1, drd_opt(4));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("seed 77"), std::string::npos);
  }
}

TEST(DrdFinetune, ScheduleOverrunIsRejected) {
  DRDState<float> st(ToyEncoder<float>(small_config(), 1), ToyEncoder<float>(small_config(), 2));
  EXPECT_THROW(drd_finetune(st, noiseless_pairs(), 11, drd_opt(10)), Error);
}

TEST(SpanMask, CoversRequestedFractionInSpans) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = span_mask(100, 0.3, 5, rng);
    const auto count = std::count(m.begin(), m.end(), true);
    EXPECT_GE(count, 30);
    EXPECT_LE(count, 34);
  }
}

TEST(Pretrain, LossDecreases) {
  ToyEncoder<float> enc(small_config(), 3);
  std::vector<MatrixD> mels;
  for (int i = 0; i < 6; ++i) mels.push_back(log_mel(utterance(200 + i, 1.0, i % 2), MelConfig{}).values);
  const MelStats stats = MelStats::estimate(mels);
  nn::OptimizerConfig o = drd_opt(120);
  SegmentStream seg = [](std::int64_t s) {
    return std::vector<Waveform>{utterance(200 + static_cast<std::uint64_t>(s % 6), 1.0, static_cast<int>(s % 2))};
  };
  const auto hist = pretrain_toy_encoder(enc, seg, stats, o);
  ASSERT_EQ(hist.size(), 120u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += hist[static_cast<std::size_t>(i)];
    tail += hist[hist.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(tail, 0.7 * head);
}

TEST(ToyCorpus, SpeakersAndLevels) {
  ToyCorpusConfig cfg;
  cfg.utterances_per_speaker = 2;
  cfg.noise_clips_per_kind = 1;
  cfg.rirs = 2;
  cfg.utterance_seconds = 1.0;
  cfg.noise_seconds = 1.0;
  const ToyCorpus c = make_toy_corpus(cfg);
  EXPECT_EQ(c.speech.size(), 4u);
  EXPECT_EQ(c.noise.size(), 4u);
  EXPECT_EQ(c.rirs.size(), 2u);
  EXPECT_EQ(c.speech.name(2), "spk1_utt0");
  for (std::size_t i = 0; i < c.speech.size(); ++i)
    EXPECT_NEAR(10 * std::log10(mean_power(c.speech.load(i).view())), -23.0, 1e-9);
  const ToyCorpus again = make_toy_corpus(cfg);
  EXPECT_EQ(again.speech.load(3).samples, c.speech.load(3).samples);
  EXPECT_EQ(again.noise.load(1).samples, c.noise.load(1).samples);
}

}  // namespace
}  // namespace dryflow::semantic
