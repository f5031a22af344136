// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "dryflow/audio/mel.hpp"
#include "dryflow/error.hpp"
#include "dryflow/flow/model.hpp"
#include "dryflow/mixture/simulate.hpp"
#include "dryflow/nn/checkpoint.hpp"
#include "dryflow/nn/optim.hpp"
#include "dryflow/semantic/encoder.hpp"

namespace dryflow::flow {

struct FlowTrainConfig {
  MaskRanges masks;
  bool use_semantic = true;  // false: phonetic input is all zeros
  bool use_masking = true;   // false: every clean frame hidden, noisy Mel visible, loss on all frames
};

/// Normalized Mels and phonetic features for one pair.
struct FlowExample {
  MatrixD clean;
  MatrixD noisy;
  MatrixD phonetic;
};

/// `encoder` may be null, giving zero phonetic features of width `phonetic_dim`.
inline FlowExample prepare_example(const Waveform& noisy, const Waveform* clean, const semantic::PhoneticEncoder* encoder,
                                   int phonetic_dim, const MelStats& stats, const MelConfig& mel, const MatrixD& fb) {
  FlowExample ex;
  ex.noisy = stats.normalize(log_mel(noisy, mel, fb).values);
  if (clean) {
    ex.clean = stats.normalize(log_mel(*clean, mel, fb).values);
    require(ex.clean.rows() == ex.noisy.rows(), ErrorKind::data, "clean/noisy frame mismatch");
  }
  if (encoder) {
    require(encoder->dim() == phonetic_dim, ErrorKind::config, "encoder dim ", encoder->dim(),
            " does not match the model's phonetic_dim ", phonetic_dim);
    ex.phonetic = encoder->encode(noisy).values;
  } else {
    ex.phonetic = MatrixD::Zero(ex.noisy.rows(), phonetic_dim);
  }
  return ex;
}

inline FlowExample prepare_example(const TrainingPair& pair, const semantic::PhoneticEncoder* encoder, int phonetic_dim,
                                   const MelStats& stats, const MelConfig& mel, const MatrixD& fb) {
  return prepare_example(pair.noisy, &pair.target, encoder, phonetic_dim, stats, mel, fb);
}

/// Builds the training condition for `ex` and returns its masked velocity
/// loss on `tape`. All randomness (t, x0, masks) comes from `rng`.
template <class T>
nn::Var<T> example_loss(nn::Tape<T>& tape, const FlowModel<T>& model, const FlowExample& ex, Rng& rng,
                        const FlowTrainConfig& cfg) {
  const Eigen::Index frames = ex.clean.rows();
  const double t = sample_time(rng);
  const MatrixD x0 = gaussian_like<double>(frames, ex.clean.cols(), rng);
  auto [mask_clean, mask_noisy] =
      cfg.use_masking ? build_infilling_masks(rng, frames, cfg.masks)
                      : std::pair{InfillingMask::all(frames), InfillingMask::none(frames)};
  const MatrixD phon = cfg.use_semantic ? ex.phonetic : MatrixD::Zero(ex.phonetic.rows(), ex.phonetic.cols());
  const ConditionBundle cond = assemble_condition(phon, ex.noisy, ex.clean, mask_clean, mask_noisy);
  const Matrix<T> xt = interpolate(x0, ex.clean, t).template cast<T>();
  const Matrix<T> vt = velocity_target(x0, ex.clean).template cast<T>();
  return masked_cfm_loss(model.forward(tape, tape.constant(xt), t, cond), vt, cond.mask_clean);
}

/// One optimizer update on the batch mean of the masked loss. Example i uses
/// the child stream derive_seed(step_seed, i).
template <class T>
double train_step(FlowModel<T>& model, nn::AdamW<T>& opt, const std::vector<FlowExample>& batch,
                  std::uint64_t step_seed, double lr, const nn::OptimizerConfig& opt_cfg,
                  const FlowTrainConfig& cfg = {}) {
  require(!batch.empty(), ErrorKind::data, "train_step: empty batch");
  nn::Gradients<T> grads(model.params());
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng(derive_seed(step_seed, i));
    nn::Tape<T> tape;
    nn::Var<T> l = example_loss(tape, model, batch[i], rng, cfg);
    tape.backward(l);
    tape.accumulate(model.params(), grads);
    loss += static_cast<double>(l.value()(0, 0));
  }
  loss /= static_cast<double>(batch.size());
  if (!std::isfinite(loss)) fail(ErrorKind::numeric, "non-finite flow loss (step seed ", step_seed, ")");
  grads.scale(static_cast<T>(1.0 / static_cast<double>(batch.size())));
  opt.step(model.params(), std::move(grads), lr, opt_cfg);
  return loss;
}

/// Mean masked loss without updates; draws are a function of `seed` only, so
/// several models can be compared on identical t, noise and masks.
template <class T>
double evaluation_loss(const FlowModel<T>& model, const std::vector<FlowExample>& examples, std::uint64_t seed,
                       const FlowTrainConfig& cfg = {}, int draws = 1) {
  require(!examples.empty() && draws >= 1, ErrorKind::data, "evaluation_loss: nothing to evaluate");
  double total = 0.0;
  for (int d = 0; d < draws; ++d)
    for (std::size_t i = 0; i < examples.size(); ++i) {
      Rng rng(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(d)), i));
      nn::Tape<T> tape;
      tape.track_params(false);
      total += static_cast<double>(example_loss(tape, model, examples[i], rng, cfg).value()(0, 0));
    }
  return total / static_cast<double>(examples.size() * static_cast<std::size_t>(draws));
}

/// Generates a log-Mel (original scale) for `ex.noisy` in inference layout.
template <class T>
MatrixD enhance_mel(const FlowModel<T>& model, const FlowExample& ex, const MelStats& stats, int n_steps,
                    std::uint64_t seed, bool use_semantic = true) {
  const MatrixD phon = use_semantic ? ex.phonetic : MatrixD::Zero(ex.phonetic.rows(), ex.phonetic.cols());
  return stats.denormalize(euler_sample(model, inference_condition(phon, ex.noisy), n_steps, seed));
}

/// Everything needed to run a trained model besides the conditioning encoder.
template <class T>
struct FlowArtifact {
  FlowModel<T> model;
  MelStats stats;
  MelConfig mel;
  FlowTrainConfig train;
  std::uint64_t encoder_checksum = 0;
  std::int64_t step = 0;

  nn::Checkpoint to_checkpoint() const {
    nn::Checkpoint c;
    c.kind = nn::CheckpointKind::flow;
    c.step = static_cast<std::uint64_t>(step);
    c.header["backbone"] = model.config();
    c.header["mel"] = {{"sample_rate", mel.sample_rate}, {"n_fft", mel.n_fft}, {"win_length", mel.win_length},
                       {"hop", mel.hop}, {"n_mels", mel.n_mels}, {"f_min", mel.f_min}, {"f_max", mel.f_max},
                       {"log_floor", mel.log_floor}};
    c.header["use_semantic"] = train.use_semantic;
    c.header["use_masking"] = train.use_masking;
    c.header["encoder_checksum"] = std::to_string(encoder_checksum);
    c.put_params(model.params(), "model.");
    c.put<double>("stats.mean", stats.mean);
    c.put<double>("stats.stddev", stats.stddev);
    return c;
  }

  static FlowArtifact from_checkpoint(const nn::Checkpoint& c) {
    require(c.kind == nn::CheckpointKind::flow, ErrorKind::data, "not a flow checkpoint");
    FlowArtifact a{FlowModel<T>(c.header.at("backbone").get<BackboneConfig>())};
    c.get_params(a.model.params(), "model.");
    const auto& m = c.header.at("mel");
    a.mel.sample_rate = m.at("sample_rate");
    a.mel.n_fft = m.at("n_fft");
    a.mel.win_length = m.at("win_length");
    a.mel.hop = m.at("hop");
    a.mel.n_mels = m.at("n_mels");
    a.mel.f_min = m.at("f_min");
    a.mel.f_max = m.at("f_max");
    a.mel.log_floor = m.at("log_floor");
    a.mel.validate();
    a.train.use_semantic = c.header.at("use_semantic");
    a.train.use_masking = c.header.at("use_masking");
    a.encoder_checksum = std::stoull(c.header.at("encoder_checksum").get<std::string>());
    a.stats.mean = c.get<double>("stats.mean");
    a.stats.stddev = c.get<double>("stats.stddev");
    a.step = static_cast<std::int64_t>(c.step);
    require(a.stats.mean.size() == a.mel.n_mels && a.stats.stddev.size() == a.mel.n_mels, ErrorKind::data,
            "flow checkpoint: normalization stats do not match n_mels");
    return a;
  }

  void save(const std::filesystem::path& path) const { to_checkpoint().save(path); }
  static FlowArtifact load(const std::filesystem::path& path) {
    return from_checkpoint(nn::Checkpoint::load(path, nn::CheckpointKind::flow));
  }
};

}  // namespace dryflow::flow
