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
#include "dryflow/audio/waveform.hpp"
#include "dryflow/nn/autodiff.hpp"
#include "dryflow/nn/checkpoint.hpp"
#include "dryflow/nn/layers.hpp"
#include "dryflow/rng.hpp"

namespace dryflow::semantic {

/// frames x dim continuous features at the Mel frame rate.
struct PhoneticRepresentation {
  MatrixD values;
  double frame_rate = 50.0;

  Eigen::Index frames() const { return values.rows(); }
  Eigen::Index dim() const { return values.cols(); }
};

/// Waveform -> frame-level representation. Implementations must emit exactly
/// frame_count(N) frames for N input samples so features align with log-Mel.
class PhoneticEncoder {
 public:
  virtual ~PhoneticEncoder() = default;
  virtual int dim() const = 0;
  virtual double frame_rate() const = 0;
  virtual PhoneticRepresentation encode(const Waveform& wav) const = 0;
  /// Identifies the weights; used for frozen-teacher checks and fingerprints.
  virtual std::uint64_t checksum() const = 0;
};

inline PhoneticRepresentation encode(const PhoneticEncoder& enc, const Waveform& wav) { return enc.encode(wav); }

/// Linear map of raw analysis frames (no bias). Cheap reference encoder.
class LinearFrameEncoder final : public PhoneticEncoder {
 public:
  LinearFrameEncoder(MatrixD weights, MelConfig mel = {}) : weights_(std::move(weights)), mel_(mel) {
    require(weights_.rows() == mel_.n_fft, ErrorKind::config, "linear encoder expects ", mel_.n_fft, " input taps");
  }

  static LinearFrameEncoder random(int dim, std::uint64_t seed, MelConfig mel = {}) {
    Rng rng(seed);
    return LinearFrameEncoder(nn::gaussian_init<double>(mel.n_fft, dim, rng, 1.0 / std::sqrt(mel.n_fft)), mel);
  }

  int dim() const override { return static_cast<int>(weights_.cols()); }
  double frame_rate() const override { return mel_.frame_rate(); }

  PhoneticRepresentation encode(const Waveform& wav) const override {
    require(wav.sample_rate == mel_.sample_rate, ErrorKind::data, "encoder expects ", mel_.sample_rate, " Hz input");
    return {frame_signal(wav.view(), mel_) * weights_, mel_.frame_rate()};
  }

  std::uint64_t checksum() const override {
    return nn::fnv1a(weights_.data(), sizeof(double) * static_cast<std::size_t>(weights_.size()));
  }

 private:
  MatrixD weights_;
  MelConfig mel_;
};

struct ToyEncoderConfig {
  int dim = 64;
  int filters = 48;  // analysis filter pairs in the strided front-end
  int layers = 2;
  int heads = 4;
  int ffn = 128;
  double energy_eps = 1e-6;
  double filter_low_hz = 60.0;
  double filter_high_hz = 7600.0;
  MelConfig mel;

  void validate() const {
    require(dim > 0 && filters > 0 && layers >= 0 && heads > 0 && ffn > 0, ErrorKind::config,
            "toy encoder: sizes must be positive");
    require(dim % heads == 0, ErrorKind::config, "toy encoder: dim ", dim, " not divisible by ", heads, " heads");
    require(energy_eps > 0.0, ErrorKind::config, "toy encoder: energy_eps must be positive");
    mel.validate();
  }

  bool operator==(const ToyEncoderConfig&) const = default;
};

inline nlohmann::json to_json(const ToyEncoderConfig& c) {
  return {{"architecture", "strided-conv-transformer"},
          {"dim", c.dim},
          {"filters", c.filters},
          {"layers", c.layers},
          {"heads", c.heads},
          {"ffn", c.ffn},
          {"energy_eps", c.energy_eps},
          {"filter_low_hz", c.filter_low_hz},
          {"filter_high_hz", c.filter_high_hz},
          {"n_fft", c.mel.n_fft},
          {"hop", c.mel.hop},
          {"sample_rate", c.mel.sample_rate},
          {"frame_rate", c.mel.frame_rate()}};
}

inline ToyEncoderConfig toy_encoder_config_from_json(const nlohmann::json& j) {
  require(j.value("architecture", "") == "strided-conv-transformer", ErrorKind::data,
          "encoder checkpoint: unknown architecture");
  ToyEncoderConfig c;
  c.dim = j.at("dim");
  c.filters = j.at("filters");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ffn = j.at("ffn");
  c.energy_eps = j.at("energy_eps");
  c.filter_low_hz = j.at("filter_low_hz");
  c.filter_high_hz = j.at("filter_high_hz");
  c.mel.n_fft = c.mel.win_length = j.at("n_fft");
  c.mel.hop = j.at("hop");
  c.mel.sample_rate = j.at("sample_rate");
  c.validate();
  return c;
}

/// Stand-in for a pretrained SSL encoder: a strided convolution with
/// window-length kernels and hop stride (one output per 50 Hz frame), paired
/// log-energy pooling, frame-local mixing and a pre-norm transformer stack.
///
/// `params()` holds the representation network. `aux()` holds the
/// pretraining-only pieces (mask embedding and Mel prediction head).
template <class T>
class ToyEncoder final : public PhoneticEncoder {
 public:
  explicit ToyEncoder(ToyEncoderConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    params_.add("front.w", analysis_filters());
    params_.add("front.gain", Matrix<T>::Constant(1, cfg_.filters, static_cast<T>(0.2)));
    params_.add("front.bias", Matrix<T>::Zero(1, cfg_.filters));
    nn::add_linear(params_, "front.proj", cfg_.filters, cfg_.dim, rng);
    nn::add_conv3(params_, "pos", cfg_.dim, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string b = "block" + std::to_string(l);
      nn::add_norm(params_, b + ".norm1", cfg_.dim);
      nn::add_attention(params_, b + ".attn", cfg_.dim, rng);
      nn::add_norm(params_, b + ".norm2", cfg_.dim);
      nn::add_feed_forward(params_, b + ".ffn", cfg_.dim, cfg_.ffn, rng);
    }
    nn::add_norm(params_, "final", cfg_.dim);
    aux_.add("mask_emb", nn::gaussian_init<T>(1, cfg_.dim, rng, 0.1));
    nn::add_linear(aux_, "head", cfg_.dim, cfg_.mel.n_mels, rng);
  }

  const ToyEncoderConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return params_; }
  const nn::ParamStore<T>& params() const { return params_; }
  nn::ParamStore<T>& aux() { return aux_; }
  const nn::ParamStore<T>& aux() const { return aux_; }

  int dim() const override { return cfg_.dim; }
  double frame_rate() const override { return cfg_.mel.frame_rate(); }
  std::uint64_t checksum() const override { return params_.checksum(); }

  /// Raw analysis frames for `wav` in the network's scalar type.
  Matrix<T> frames(const Waveform& wav) const {
    require(wav.sample_rate == cfg_.mel.sample_rate, ErrorKind::data, "encoder expects ", cfg_.mel.sample_rate,
            " Hz input, got ", wav.sample_rate);
    return frame_signal(wav.view(), cfg_.mel).template cast<T>();
  }

  /// Representation network. Frames flagged in `mask` have their front-end
  /// features replaced by the learned mask embedding.
  nn::Var<T> forward(nn::Tape<T>& tape, const Matrix<T>& frames, const std::vector<bool>* mask = nullptr) const {
    using namespace nn;
    Var<T> x = matmul(tape.constant(frames), tape.param(params_, "front.w"));
    x = log_energy_pairs(x, static_cast<T>(cfg_.energy_eps));
    x = add_row(mul_row(x, tape.param(params_, "front.gain")), tape.param(params_, "front.bias"));
    x = apply_linear(tape, params_, "front.proj", x);
    if (mask) x = replace_rows(x, *mask, tape.param(aux_, "mask_emb"));
    x = add(x, apply_conv3(tape, params_, "pos", x));
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string b = "block" + std::to_string(l);
      x = add(x, apply_attention(tape, params_, b + ".attn", apply_norm(tape, params_, b + ".norm1", x), cfg_.heads));
      x = add(x, apply_feed_forward(tape, params_, b + ".ffn", apply_norm(tape, params_, b + ".norm2", x)));
    }
    return apply_norm(tape, params_, "final", x);
  }

  nn::Var<T> predict_mel(nn::Tape<T>& tape, nn::Var<T> reps) const {
    return nn::apply_linear(tape, aux_, "head", reps);
  }

  PhoneticRepresentation encode(const Waveform& wav) const override {
    nn::Tape<T> tape;
    tape.track_params(false);
    return {forward(tape, frames(wav)).value().template cast<double>(), frame_rate()};
  }

  nn::Checkpoint to_checkpoint(std::uint64_t step = 0) const {
    nn::Checkpoint c;
    c.kind = nn::CheckpointKind::encoder;
    c.step = step;
    c.header["encoder"] = to_json(cfg_);
    c.header["checksum"] = std::to_string(checksum());
    c.put_params(params_, "enc.");
    c.put_params(aux_, "aux.");
    return c;
  }

  static ToyEncoder from_checkpoint(const nn::Checkpoint& c) {
    require(c.kind == nn::CheckpointKind::encoder, ErrorKind::data, "not an encoder checkpoint");
    ToyEncoder enc(toy_encoder_config_from_json(c.header.at("encoder")));
    c.get_params(enc.params_, "enc.");
    c.get_params(enc.aux_, "aux.");
    return enc;
  }

  void save(const std::filesystem::path& path, std::uint64_t step = 0) const { to_checkpoint(step).save(path); }
  static ToyEncoder load(const std::filesystem::path& path) {
    return from_checkpoint(nn::Checkpoint::load(path, nn::CheckpointKind::encoder));
  }

 private:
  /// Hann-windowed cosine/sine pairs at Mel-spaced centers, scaled to unit
  /// response for a unit-amplitude sinusoid at the center frequency.
  Matrix<T> analysis_filters() const {
    const int n = cfg_.mel.n_fft, k = cfg_.filters;
    const auto window = hann_window(n);
    double wsum = 0.0;
    for (double w : window) wsum += w;
    const double lo = hz_to_mel(cfg_.filter_low_hz), hi = hz_to_mel(cfg_.filter_high_hz);
    Matrix<T> w(n, 2 * k);
    for (int j = 0; j < k; ++j) {
      const double f = mel_to_hz(lo + (hi - lo) * j / std::max(1, k - 1));
      for (int i = 0; i < n; ++i) {
        const double arg = 2.0 * M_PI * f * (i - n / 2) / cfg_.mel.sample_rate;
        w(i, j) = static_cast<T>(2.0 * window[static_cast<std::size_t>(i)] * std::cos(arg) / wsum);
        w(i, k + j) = static_cast<T>(2.0 * window[static_cast<std::size_t>(i)] * std::sin(arg) / wsum);
      }
    }
    return w;
  }

  ToyEncoderConfig cfg_;
  nn::ParamStore<T> params_;
  nn::ParamStore<T> aux_;
};

}  // namespace dryflow::semantic
