// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "json.hpp"

#include "dryflow/audio/mel.hpp"
#include "dryflow/error.hpp"
#include "dryflow/flow/condition.hpp"
#include "dryflow/flow/mask.hpp"
#include "dryflow/flow/path.hpp"
#include "dryflow/nn/autodiff.hpp"
#include "dryflow/nn/checkpoint.hpp"
#include "dryflow/nn/layers.hpp"
#include "dryflow/rng.hpp"

namespace dryflow::flow {

struct BackboneConfig {
  int layers = 12;
  int heads = 16;
  int hidden = 1024;
  int ffn = 2048;
  int mel_bins = 100;
  int phonetic_dim = 1024;
  int proj_dim = 512;
  int time_dim = 256;
  bool zero_init = true;  // adaLN-Zero gates and output layer start at zero

  /// x_t | projected phonetic | noisy Mel + flag | clean context + flag.
  int input_width() const { return mel_bins + proj_dim + (mel_bins + 1) + (mel_bins + 1); }

  void validate() const {
    require(layers >= 0 && heads > 0 && hidden > 0 && ffn > 0 && mel_bins > 0 && phonetic_dim > 0 && proj_dim > 0,
            ErrorKind::config, "backbone: sizes must be positive");
    require(hidden % heads == 0, ErrorKind::config, "backbone: hidden ", hidden, " not divisible by ", heads,
            " heads");
    require(time_dim > 0 && time_dim % 2 == 0, ErrorKind::config, "backbone: time_dim must be even");
  }

  bool operator==(const BackboneConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(BackboneConfig, layers, heads, hidden, ffn, mel_bins, phonetic_dim,
                                                proj_dim, time_dim, zero_init)

/// DiT-style velocity network over normalized log-Mel frames. Each block is
/// pre-norm attention and feed-forward, both modulated (shift, scale, gate)
/// by an embedding of t.
template <class T>
class FlowModel {
 public:
  explicit FlowModel(BackboneConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const bool z = cfg_.zero_init;
    nn::add_linear(params_, "sem_proj", cfg_.phonetic_dim, cfg_.proj_dim, rng, false, false);
    nn::add_linear(params_, "in", cfg_.input_width(), cfg_.hidden, rng);
    nn::add_conv3(params_, "pos", cfg_.hidden, rng);
    nn::add_linear(params_, "time.fc1", cfg_.time_dim, cfg_.hidden, rng);
    nn::add_linear(params_, "time.fc2", cfg_.hidden, cfg_.hidden, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string b = block(l);
      nn::add_linear(params_, b + ".ada", cfg_.hidden, 6 * cfg_.hidden, rng, z);
      nn::add_attention(params_, b + ".attn", cfg_.hidden, rng);
      nn::add_feed_forward(params_, b + ".ffn", cfg_.hidden, cfg_.ffn, rng);
    }
    nn::add_linear(params_, "final.ada", cfg_.hidden, 2 * cfg_.hidden, rng, z);
    nn::add_linear(params_, "final.out", cfg_.hidden, cfg_.mel_bins, rng, z);
  }

  const BackboneConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }

  /// Semantic projection weights (phonetic_dim x proj_dim, no bias).
  MatrixD projection() const { return params_.value(params_.index("sem_proj.w")).template cast<double>(); }

  nn::Var<T> forward(nn::Tape<T>& tape, nn::Var<T> x_t, double t, const ConditionBundle& cond) const {
    using namespace nn;
    const Eigen::Index frames = x_t.rows();
    require(x_t.cols() == cfg_.mel_bins, ErrorKind::data, "backbone: x_t has ", x_t.cols(), " bins, expected ",
            cfg_.mel_bins);
    require(cond.frames() == frames && cond.phonetic.rows() == frames, ErrorKind::data,
            "backbone: condition has ", cond.frames(), " frames, x_t has ", frames);
    require(cond.phonetic.cols() == cfg_.phonetic_dim, ErrorKind::data, "backbone: phonetic dim ",
            cond.phonetic.cols(), ", expected ", cfg_.phonetic_dim);
    require(t >= 0.0 && t <= 1.0, ErrorKind::data, "backbone: t outside [0, 1]");

    Var<T> phon = matmul(tape.constant(cond.phonetic.template cast<T>()), tape.param(params_, "sem_proj.w"));
    Var<T> h = concat_cols<T>({x_t, phon, tape.constant(with_flag(cond.noisy_mel, cond.mask_noisy)),
                               tape.constant(with_flag(cond.clean_mel_context, cond.mask_clean))});
    h = apply_linear(tape, params_, "in", h);
    h = add(h, apply_conv3(tape, params_, "pos", h));

    Var<T> c = tape.constant(sinusoidal_embedding<T>(t, cfg_.time_dim));
    c = apply_linear(tape, params_, "time.fc2", silu(apply_linear(tape, params_, "time.fc1", c)));
    Var<T> sc = silu(c);

    const Eigen::Index H = cfg_.hidden;
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string b = block(l);
      Var<T> mod = apply_linear(tape, params_, b + ".ada", sc);
      Var<T> a = modulate(h, slice_cols(mod, 0, H), slice_cols(mod, H, H));
      h = add(h, mul_row(apply_attention(tape, params_, b + ".attn", a, cfg_.heads), slice_cols(mod, 2 * H, H)));
      Var<T> f = modulate(h, slice_cols(mod, 3 * H, H), slice_cols(mod, 4 * H, H));
      h = add(h, mul_row(apply_feed_forward(tape, params_, b + ".ffn", f), slice_cols(mod, 5 * H, H)));
    }
    Var<T> fmod = apply_linear(tape, params_, "final.ada", sc);
    return apply_linear(tape, params_, "final.out", modulate(h, slice_cols(fmod, 0, H), slice_cols(fmod, H, H)));
  }

  /// Evaluation-mode velocity v(x, t | cond).
  MatrixD velocity(const MatrixD& x, double t, const ConditionBundle& cond) const {
    nn::Tape<T> tape;
    tape.track_params(false);
    return forward(tape, tape.constant(x.template cast<T>()), t, cond).value().template cast<double>();
  }

 private:
  static std::string block(int l) { return "block" + std::to_string(l); }

  static nn::Var<T> modulate(nn::Var<T> x, nn::Var<T> shift, nn::Var<T> scale) {
    return nn::add_row(nn::mul_row(nn::layer_norm(x), nn::add_scalar(scale, static_cast<T>(1))), shift);
  }

  static Matrix<T> with_flag(const MatrixD& mel, const InfillingMask& mask) {
    Matrix<T> m(mel.rows(), mel.cols() + 1);
    m.leftCols(mel.cols()) = mel.template cast<T>();
    for (Eigen::Index i = 0; i < mel.rows(); ++i) m(i, mel.cols()) = mask.missing[static_cast<std::size_t>(i)] ? 1 : 0;
    return m;
  }

  BackboneConfig cfg_;
  nn::ParamStore<T> params_;
};

/// Mean squared error over all entries of frames flagged missing in `mask`.
template <class T>
nn::Var<T> masked_cfm_loss(nn::Var<T> v_pred, const Matrix<T>& v_target, const InfillingMask& mask) {
  require(mask.frames() == v_pred.rows(), ErrorKind::data, "masked_cfm_loss: mask has ", mask.frames(),
          " frames, prediction has ", v_pred.rows());
  return nn::masked_mse(v_pred, v_target, mask.missing);
}

inline double masked_cfm_loss(const MatrixD& v_pred, const MatrixD& v_target, const InfillingMask& mask) {
  nn::Tape<double> tape;
  return masked_cfm_loss(tape.constant(v_pred), v_target, mask).value()(0, 0);
}

using VelocityField = std::function<MatrixD(const MatrixD& x, double t)>;

/// Forward Euler from t = 0 to t = 1 with uniform steps t_k = k / n_steps.
inline MatrixD euler_integrate(MatrixD x, int n_steps, const VelocityField& field) {
  require(n_steps >= 1, ErrorKind::config, "euler: n_steps must be >= 1, got ", n_steps);
  const double dt = 1.0 / n_steps;
  for (int k = 0; k < n_steps; ++k) x += dt * field(x, static_cast<double>(k) / n_steps);
  return x;
}

/// Samples a normalized Mel from Gaussian noise drawn with `seed`.
template <class T>
MatrixD euler_sample(const FlowModel<T>& model, const ConditionBundle& cond, int n_steps, std::uint64_t seed) {
  Rng rng(seed);
  MatrixD x0 = gaussian_like<double>(cond.frames(), model.config().mel_bins, rng);
  return euler_integrate(std::move(x0), n_steps,
                         [&](const MatrixD& x, double t) { return model.velocity(x, t, cond); });
}

}  // namespace dryflow::flow
