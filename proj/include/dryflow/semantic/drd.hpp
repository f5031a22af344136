// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "dryflow/audio/mel.hpp"
#include "dryflow/error.hpp"
#include "dryflow/mixture/simulate.hpp"
#include "dryflow/nn/autodiff.hpp"
#include "dryflow/nn/checkpoint.hpp"
#include "dryflow/nn/optim.hpp"
#include "dryflow/rng.hpp"
#include "dryflow/semantic/encoder.hpp"

namespace dryflow::semantic {

/// Mean over frames and dims of the squared difference.
inline double drd_loss(const MatrixD& student, const MatrixD& teacher) {
  require(student.rows() == teacher.rows() && student.cols() == teacher.cols(), ErrorKind::data,
          "drd_loss: shape mismatch ", student.rows(), "x", student.cols(), " vs ", teacher.rows(), "x",
          teacher.cols());
  require(student.size() > 0, ErrorKind::data, "drd_loss: empty representations");
  return (student - teacher).squaredNorm() / static_cast<double>(student.size());
}

inline double drd_loss(const PhoneticRepresentation& student, const PhoneticRepresentation& teacher) {
  return drd_loss(student.values, teacher.values);
}

/// Teacher/student pair for denoising distillation. The teacher is only ever
/// read through encode(); training touches `student` and `optimizer`.
template <class T>
struct DRDState {
  ToyEncoder<T> teacher;
  ToyEncoder<T> student;
  nn::AdamW<T> optimizer;
  std::int64_t step = 0;
  std::vector<double> loss_history;
  std::uint64_t seed = 0;

  DRDState(ToyEncoder<T> teacher_enc, ToyEncoder<T> student_enc, std::uint64_t run_seed = 0)
      : teacher(std::move(teacher_enc)), student(std::move(student_enc)), optimizer(student.params()),
        seed(run_seed) {
    require(teacher.dim() == student.dim(), ErrorKind::config, "teacher dim ", teacher.dim(), " != student dim ",
            student.dim());
  }

  /// Both roles start from the same weights.
  static DRDState from_pretrained(const ToyEncoder<T>& enc, std::uint64_t run_seed = 0) {
    return DRDState(enc, enc, run_seed);
  }

  /// Student weights, optimizer moments and progress. The teacher is stored
  /// separately as an ordinary encoder checkpoint.
  nn::Checkpoint resume_checkpoint() const {
    nn::Checkpoint c;
    c.kind = nn::CheckpointKind::optimizer;
    c.step = static_cast<std::uint64_t>(step);
    c.header["encoder"] = to_json(student.config());
    c.header["seed"] = std::to_string(seed);
    c.header["loss_history"] = loss_history;
    c.header["teacher_checksum"] = std::to_string(teacher.checksum());
    c.put_params(student.params(), "student.");
    nn::put_optimizer(c, optimizer, student.params(), "adam.");
    return c;
  }

  void restore(const nn::Checkpoint& c) {
    require(c.kind == nn::CheckpointKind::optimizer, ErrorKind::data, "not a resume checkpoint");
    require(c.header.at("teacher_checksum").get<std::string>() == std::to_string(teacher.checksum()),
            ErrorKind::data, "resume checkpoint was written against a different teacher");
    c.get_params(student.params(), "student.");
    optimizer = nn::get_optimizer(c, student.params(), "adam.");
    step = static_cast<std::int64_t>(c.step);
    seed = std::stoull(c.header.at("seed").get<std::string>());
    loss_history = c.header.at("loss_history").get<std::vector<double>>();
  }
};

/// Yields the batch for a global step index; must be a pure function of the
/// index so that resumed runs see the same data.
using PairStream = std::function<std::vector<TrainingPair>(std::int64_t step)>;
using StepCallback = std::function<void(std::int64_t step, double loss, double lr)>;

/// Runs `steps` optimizer updates of student(noisy) -> teacher(target). The
/// learning rate follows opt_cfg's schedule at the 1-based global step.
template <class T>
DRDState<T>& drd_finetune(DRDState<T>& state, const PairStream& pairs, std::int64_t steps,
                          const nn::OptimizerConfig& opt_cfg, const StepCallback& on_step = {}) {
  opt_cfg.validate();
  require(steps >= 0, ErrorKind::config, "drd_finetune: steps must be non-negative");
  require(state.step + steps <= opt_cfg.steps, ErrorKind::config, "drd_finetune: step ", state.step + steps,
          " exceeds the schedule length ", opt_cfg.steps);
  for (std::int64_t k = 0; k < steps; ++k) {
    const std::int64_t global = state.step + 1;
    const std::vector<TrainingPair> batch = pairs(state.step);
    require(!batch.empty(), ErrorKind::data, "drd_finetune: empty batch at step ", global);
    nn::Gradients<T> grads(state.student.params());
    double loss = 0.0;
    for (const TrainingPair& pair : batch) {
      const Matrix<T> target = state.teacher.encode(pair.target).values.template cast<T>();
      nn::Tape<T> tape;
      nn::Var<T> l = nn::mse(state.student.forward(tape, state.student.frames(pair.noisy)), target);
      tape.backward(l);
      tape.accumulate(state.student.params(), grads);
      loss += static_cast<double>(l.value()(0, 0));
    }
    loss /= static_cast<double>(batch.size());
    if (!std::isfinite(loss))
      fail(ErrorKind::numeric, "non-finite DRD loss at step ", global, " (seed ", state.seed, ")");
    grads.scale(static_cast<T>(1.0 / static_cast<double>(batch.size())));
    const double lr = opt_cfg.lr_at(global);
    state.optimizer.step(state.student.params(), std::move(grads), lr, opt_cfg);
    state.step = global;
    state.loss_history.push_back(loss);
    if (on_step) on_step(global, loss, lr);
  }
  return state;
}

struct PretrainOptions {
  double mask_ratio = 0.30;
  int span = 5;
  double visible_weight = 0.25;  // weight of the unmasked-frame reconstruction term
  std::uint64_t seed = 0;
};

/// Frame mask covering about `ratio` of `frames` with spans of `span` frames.
inline std::vector<bool> span_mask(Eigen::Index frames, double ratio, int span, Rng& rng) {
  require(frames > 0 && span > 0 && ratio > 0.0 && ratio < 1.0, ErrorKind::config, "span_mask: bad arguments");
  std::vector<bool> mask(static_cast<std::size_t>(frames), false);
  const auto want = std::max<Eigen::Index>(1, std::llround(ratio * static_cast<double>(frames)));
  Eigen::Index count = 0;
  while (count < want) {
    const auto start = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(frames)));
    for (Eigen::Index i = start; i < std::min(frames, start + span); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) ++count;
      mask[static_cast<std::size_t>(i)] = true;
    }
  }
  return mask;
}

using SegmentStream = std::function<std::vector<Waveform>(std::int64_t step)>;

/// Masked-frame self-prediction on dry speech: masked frames regress the
/// normalized log-Mel of the input through the auxiliary head. Returns the
/// per-step loss history.
template <class T>
std::vector<double> pretrain_toy_encoder(ToyEncoder<T>& enc, const SegmentStream& segments, const MelStats& stats,
                                         const nn::OptimizerConfig& opt_cfg, const PretrainOptions& opts = {},
                                         const StepCallback& on_step = {}) {
  opt_cfg.validate();
  const MatrixD fb = mel_filterbank(enc.config().mel);
  nn::AdamW<T> opt_main(enc.params());
  nn::AdamW<T> opt_aux(enc.aux());
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(opt_cfg.steps));
  for (std::int64_t s = 0; s < opt_cfg.steps; ++s) {
    const std::vector<Waveform> batch = segments(s);
    require(!batch.empty(), ErrorKind::data, "pretrain: empty batch at step ", s + 1);
    Rng rng(derive_seed(opts.seed, static_cast<std::uint64_t>(s)));
    nn::Gradients<T> g_main(enc.params());
    nn::Gradients<T> g_aux(enc.aux());
    double loss = 0.0;
    for (const Waveform& wav : batch) {
      const Matrix<T> target = stats.normalize(log_mel(wav, enc.config().mel, fb).values).template cast<T>();
      const std::vector<bool> mask = span_mask(target.rows(), opts.mask_ratio, opts.span, rng);
      std::vector<bool> visible(mask.size());
      for (std::size_t i = 0; i < mask.size(); ++i) visible[i] = !mask[i];
      nn::Tape<T> tape;
      nn::Var<T> pred = enc.predict_mel(tape, enc.forward(tape, enc.frames(wav), &mask));
      nn::Var<T> l = nn::masked_mse(pred, target, mask);
      if (opts.visible_weight > 0.0 && std::find(visible.begin(), visible.end(), true) != visible.end())
        l = nn::add(l, nn::scale(nn::masked_mse(pred, target, visible), static_cast<T>(opts.visible_weight)));
      tape.backward(l);
      tape.accumulate(enc.params(), g_main);
      tape.accumulate(enc.aux(), g_aux);
      loss += static_cast<double>(l.value()(0, 0));
    }
    loss /= static_cast<double>(batch.size());
    if (!std::isfinite(loss)) fail(ErrorKind::numeric, "non-finite pretraining loss at step ", s + 1, " (seed ", opts.seed, ")");
    const auto inv = static_cast<T>(1.0 / static_cast<double>(batch.size()));
    g_main.scale(inv);
    g_aux.scale(inv);
    const double lr = opt_cfg.lr_at(s + 1);
    opt_main.step(enc.params(), std::move(g_main), lr, opt_cfg);
    opt_aux.step(enc.aux(), std::move(g_aux), lr, opt_cfg);
    history.push_back(loss);
    if (on_step) on_step(s + 1, loss, lr);
  }
  return history;
}

}  // namespace dryflow::semantic
