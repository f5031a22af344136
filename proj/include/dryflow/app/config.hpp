// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"

#include "dryflow/audio/mel.hpp"
#include "dryflow/error.hpp"
#include "dryflow/flow/model.hpp"
#include "dryflow/flow/train.hpp"
#include "dryflow/mixture/simulate.hpp"
#include "dryflow/nn/optim.hpp"
#include "dryflow/semantic/drd.hpp"
#include "dryflow/semantic/encoder.hpp"

namespace dryflow::app {

struct TrainStage {
  nn::OptimizerConfig opt;
  int log_every = 1;
  int snapshot_every = 0;  // 0 disables periodic snapshots
};

struct Paths {
  std::string speech_manifest;
  std::string noise_manifest;
  std::string rir_manifest;
  std::string output_dir = "run";
  std::string pretrained_encoder;  // empty: <output_dir>/encoder_pretrained.ckpt
  std::string drd_encoder;         // empty: <output_dir>/encoder_drd.ckpt
  std::string mel_stats;           // empty: <output_dir>/mel_stats.ckpt
  std::string flow;                // empty: <output_dir>/flow.ckpt
};

struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  MelConfig mel;
  MixtureConfig mixture;
  semantic::ToyEncoderConfig encoder;
  flow::BackboneConfig backbone;
  flow::MaskRanges masks;
  semantic::PretrainOptions pretrain_objective;
  TrainStage pretrain;
  TrainStage drd;
  TrainStage fm;
  int stats_pairs = 64;
  int sampling_steps = 8;
  int griffin_lim_iters = 64;
  bool strict_sample_rate = false;
  Paths paths;

  void validate() const {
    require(profile == "desk" || profile == "paper" || profile == "custom", ErrorKind::config, "unknown profile '",
            profile, "'");
    mel.validate();
    mixture.validate();
    require(mixture.snr_low < mixture.snr_high, ErrorKind::config, "mixture: need snr_low < snr_high");
    encoder.validate();
    require(encoder.mel == mel, ErrorKind::config, "encoder analysis must use the run's Mel configuration");
    backbone.validate();
    require(backbone.mel_bins == mel.n_mels, ErrorKind::config, "backbone mel_bins ", backbone.mel_bins,
            " != n_mels ", mel.n_mels);
    require(backbone.phonetic_dim == encoder.dim, ErrorKind::config, "backbone phonetic_dim ",
            backbone.phonetic_dim, " != encoder dim ", encoder.dim);
    masks.validate();
    for (const TrainStage* s : {&pretrain, &drd, &fm}) {
      s->opt.validate();
      require(s->log_every >= 1 && s->snapshot_every >= 0, ErrorKind::config, "log_every must be >= 1");
    }
    require(stats_pairs >= 1, ErrorKind::config, "stats_pairs must be >= 1");
    require(sampling_steps >= 1, ErrorKind::config, "sampling_steps must be >= 1");
    require(griffin_lim_iters >= 1, ErrorKind::config, "griffin_lim_iters must be >= 1");
  }

  std::filesystem::path out() const { return paths.output_dir; }
  std::filesystem::path pretrained_encoder_path() const {
    return paths.pretrained_encoder.empty() ? out() / "encoder_pretrained.ckpt" : std::filesystem::path(paths.pretrained_encoder);
  }
  std::filesystem::path drd_encoder_path() const {
    return paths.drd_encoder.empty() ? out() / "encoder_drd.ckpt" : std::filesystem::path(paths.drd_encoder);
  }
  std::filesystem::path mel_stats_path() const {
    return paths.mel_stats.empty() ? out() / "mel_stats.ckpt" : std::filesystem::path(paths.mel_stats);
  }
  std::filesystem::path flow_path() const {
    return paths.flow.empty() ? out() / "flow.ckpt" : std::filesystem::path(paths.flow);
  }
};

/// Desk scale: small enough to train end to end on one CPU core.
inline RunConfig desk_profile() {
  RunConfig c;
  c.profile = "desk";
  c.encoder.dim = 64;
  c.encoder.filters = 48;
  c.encoder.layers = 2;
  c.encoder.heads = 4;
  c.encoder.ffn = 128;
  c.backbone.layers = 4;
  c.backbone.heads = 4;
  c.backbone.hidden = 256;
  c.backbone.ffn = 512;
  c.backbone.phonetic_dim = 64;
  c.backbone.proj_dim = 64;
  c.backbone.time_dim = 128;

  c.pretrain.opt.steps = 2000;
  c.pretrain.opt.peak_lr = 1e-3;
  c.pretrain.opt.batch = 4;
  c.drd.opt.steps = 1000;
  c.drd.opt.peak_lr = 5e-4;
  c.drd.opt.batch = 4;
  c.fm.opt.steps = 3000;
  c.fm.opt.peak_lr = 1e-3;
  c.fm.opt.batch = 4;
  c.fm.snapshot_every = 1000;
  for (TrainStage* s : {&c.pretrain, &c.drd, &c.fm}) s->opt.segment_seconds = 2.0;
  c.mixture.segment_seconds = 2.0;
  return c;
}

/// Full-scale numbers from the reference setup; far beyond a desk budget.
inline RunConfig paper_profile() {
  RunConfig c;
  c.profile = "paper";
  c.encoder.dim = 1024;
  c.encoder.filters = 512;
  c.encoder.layers = 12;
  c.encoder.heads = 16;
  c.encoder.ffn = 4096;
  c.backbone = flow::BackboneConfig{};
  c.pretrain.opt.steps = 100000;
  c.pretrain.opt.peak_lr = 5e-4;
  c.pretrain.opt.batch = 20;
  c.pretrain.opt.segment_seconds = 4.0;
  c.drd.opt.steps = 50000;
  c.drd.opt.peak_lr = 2e-5;
  c.drd.opt.batch = 20;
  c.drd.opt.segment_seconds = 4.0;
  c.fm.opt.steps = 100000;
  c.fm.opt.peak_lr = 1e-4;
  c.fm.opt.batch = 60;
  c.fm.opt.segment_seconds = 4.0;
  c.fm.snapshot_every = 10000;
  c.mixture.segment_seconds = 4.0;
  return c;
}

inline RunConfig profile_defaults(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  fail(ErrorKind::config, "unknown profile '", name, "' (expected desk or paper)");
}

// JSON mapping --------------------------------------------------------------

inline nlohmann::json to_json(const MelConfig& m) {
  return {{"sample_rate", m.sample_rate}, {"n_fft", m.n_fft}, {"win_length", m.win_length}, {"hop", m.hop},
          {"n_mels", m.n_mels},           {"f_min", m.f_min}, {"f_max", m.f_max},           {"log_floor", m.log_floor}};
}

inline nlohmann::json to_json(const nn::OptimizerConfig& o) {
  return {{"steps", o.steps},
          {"peak_lr", o.peak_lr},
          {"final_lr", o.final_lr},
          {"warmup_fraction", o.warmup_fraction},
          {"weight_decay", o.weight_decay},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"clip_norm", o.clip_norm},
          {"batch", o.batch},
          {"segment_seconds", o.segment_seconds}};
}

inline nlohmann::json to_json(const TrainStage& s) {
  nlohmann::json j = to_json(s.opt);
  j["log_every"] = s.log_every;
  j["snapshot_every"] = s.snapshot_every;
  return j;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j;
  j["profile"] = c.profile;
  j["seed"] = c.seed;
  j["mel"] = to_json(c.mel);
  j["mixture"] = {{"snr_low", c.mixture.snr_low},
                  {"snr_high", c.mixture.snr_high},
                  {"reverb_prob", c.mixture.reverb_prob},
                  {"target_mode", to_string(c.mixture.target_mode)},
                  {"early_window_ms", c.mixture.early_window_ms},
                  {"segment_seconds", c.mixture.segment_seconds},
                  {"max_retries", c.mixture.max_retries}};
  j["encoder"] = {{"dim", c.encoder.dim},
                  {"filters", c.encoder.filters},
                  {"layers", c.encoder.layers},
                  {"heads", c.encoder.heads},
                  {"ffn", c.encoder.ffn},
                  {"energy_eps", c.encoder.energy_eps},
                  {"filter_low_hz", c.encoder.filter_low_hz},
                  {"filter_high_hz", c.encoder.filter_high_hz}};
  j["backbone"] = c.backbone;
  j["masks"] = {{"clean_low", c.masks.clean_low},
                {"clean_high", c.masks.clean_high},
                {"noisy_low", c.masks.noisy_low},
                {"noisy_high", c.masks.noisy_high}};
  j["pretrain_objective"] = {{"mask_ratio", c.pretrain_objective.mask_ratio},
                             {"span", c.pretrain_objective.span},
                             {"visible_weight", c.pretrain_objective.visible_weight}};
  j["pretrain"] = to_json(c.pretrain);
  j["drd"] = to_json(c.drd);
  j["fm"] = to_json(c.fm);
  j["stats_pairs"] = c.stats_pairs;
  j["sampling_steps"] = c.sampling_steps;
  j["griffin_lim_iters"] = c.griffin_lim_iters;
  j["strict_sample_rate"] = c.strict_sample_rate;
  j["paths"] = {{"speech_manifest", c.paths.speech_manifest},
                {"noise_manifest", c.paths.noise_manifest},
                {"rir_manifest", c.paths.rir_manifest},
                {"output_dir", c.paths.output_dir},
                {"pretrained_encoder", c.paths.pretrained_encoder},
                {"drd_encoder", c.paths.drd_encoder},
                {"mel_stats", c.paths.mel_stats},
                {"flow", c.paths.flow}};
  return j;
}

namespace detail {
template <class V>
void read(const nlohmann::json& j, const char* key, V& into) {
  if (j.contains(key)) into = j.at(key).get<V>();
}

inline void read_opt(const nlohmann::json& j, nn::OptimizerConfig& o) {
  read(j, "steps", o.steps);
  read(j, "peak_lr", o.peak_lr);
  read(j, "final_lr", o.final_lr);
  read(j, "warmup_fraction", o.warmup_fraction);
  read(j, "weight_decay", o.weight_decay);
  read(j, "beta1", o.beta1);
  read(j, "beta2", o.beta2);
  read(j, "eps", o.eps);
  read(j, "clip_norm", o.clip_norm);
  read(j, "batch", o.batch);
  read(j, "segment_seconds", o.segment_seconds);
}

inline void read_stage(const nlohmann::json& j, TrainStage& s) {
  read_opt(j, s.opt);
  read(j, "log_every", s.log_every);
  read(j, "snapshot_every", s.snapshot_every);
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* name : known) ok = ok || k == name;
    require(ok, ErrorKind::config, "unknown key '", k, "' in ", where);
  }
}
}  // namespace detail

/// Values absent from `j` keep the defaults of the profile named in `j`
/// (or `base_profile` when `j` names none).
inline RunConfig run_config_from_json(const nlohmann::json& j, const std::string& base_profile = "desk") {
  using detail::read;
  try {
    detail::reject_unknown(j,
                           {"profile", "seed", "mel", "mixture", "encoder", "backbone", "masks", "pretrain_objective",
                            "pretrain", "drd", "fm", "stats_pairs", "sampling_steps", "griffin_lim_iters",
                            "strict_sample_rate", "paths"},
                           "run config");
    const std::string profile = j.value("profile", base_profile);
    RunConfig c = profile == "custom" ? desk_profile() : profile_defaults(profile);
    c.profile = profile;
    read(j, "seed", c.seed);
    if (j.contains("mel")) {
      const auto& m = j.at("mel");
      read(m, "sample_rate", c.mel.sample_rate);
      read(m, "n_fft", c.mel.n_fft);
      read(m, "win_length", c.mel.win_length);
      read(m, "hop", c.mel.hop);
      read(m, "n_mels", c.mel.n_mels);
      read(m, "f_min", c.mel.f_min);
      read(m, "f_max", c.mel.f_max);
      read(m, "log_floor", c.mel.log_floor);
    }
    if (j.contains("mixture")) {
      const auto& m = j.at("mixture");
      read(m, "snr_low", c.mixture.snr_low);
      read(m, "snr_high", c.mixture.snr_high);
      read(m, "reverb_prob", c.mixture.reverb_prob);
      if (m.contains("target_mode")) c.mixture.target_mode = parse_target_mode(m.at("target_mode"));
      read(m, "early_window_ms", c.mixture.early_window_ms);
      read(m, "segment_seconds", c.mixture.segment_seconds);
      read(m, "max_retries", c.mixture.max_retries);
    }
    if (j.contains("encoder")) {
      const auto& e = j.at("encoder");
      read(e, "dim", c.encoder.dim);
      read(e, "filters", c.encoder.filters);
      read(e, "layers", c.encoder.layers);
      read(e, "heads", c.encoder.heads);
      read(e, "ffn", c.encoder.ffn);
      read(e, "energy_eps", c.encoder.energy_eps);
      read(e, "filter_low_hz", c.encoder.filter_low_hz);
      read(e, "filter_high_hz", c.encoder.filter_high_hz);
    }
    c.encoder.mel = c.mel;
    if (j.contains("backbone")) {
      nlohmann::json merged = c.backbone;
      merged.update(j.at("backbone"));
      c.backbone = merged.get<flow::BackboneConfig>();
    }
    if (j.contains("masks")) {
      const auto& m = j.at("masks");
      read(m, "clean_low", c.masks.clean_low);
      read(m, "clean_high", c.masks.clean_high);
      read(m, "noisy_low", c.masks.noisy_low);
      read(m, "noisy_high", c.masks.noisy_high);
    }
    if (j.contains("pretrain_objective")) {
      const auto& p = j.at("pretrain_objective");
      read(p, "mask_ratio", c.pretrain_objective.mask_ratio);
      read(p, "span", c.pretrain_objective.span);
      read(p, "visible_weight", c.pretrain_objective.visible_weight);
    }
    if (j.contains("pretrain")) detail::read_stage(j.at("pretrain"), c.pretrain);
    if (j.contains("drd")) detail::read_stage(j.at("drd"), c.drd);
    if (j.contains("fm")) detail::read_stage(j.at("fm"), c.fm);
    read(j, "stats_pairs", c.stats_pairs);
    read(j, "sampling_steps", c.sampling_steps);
    read(j, "griffin_lim_iters", c.griffin_lim_iters);
    read(j, "strict_sample_rate", c.strict_sample_rate);
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      read(p, "speech_manifest", c.paths.speech_manifest);
      read(p, "noise_manifest", c.paths.noise_manifest);
      read(p, "rir_manifest", c.paths.rir_manifest);
      read(p, "output_dir", c.paths.output_dir);
      read(p, "pretrained_encoder", c.paths.pretrained_encoder);
      read(p, "drd_encoder", c.paths.drd_encoder);
      read(p, "mel_stats", c.paths.mel_stats);
      read(p, "flow", c.paths.flow);
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "run config: ", e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path, const std::string& base_profile = "desk") {
  std::ifstream in(path);
  require(in.good(), ErrorKind::config, "cannot open config ", path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, path.string(), ": ", e.what());
  }
  return run_config_from_json(j, base_profile);
}

inline void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  require(out.good(), ErrorKind::config, "cannot write config ", path.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace dryflow::app
