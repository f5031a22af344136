// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "dryflow/app/config.hpp"
#include "dryflow/audio/vocoder.hpp"
#include "dryflow/audio/wav_io.hpp"
#include "dryflow/eval/report.hpp"
#include "dryflow/flow/train.hpp"
#include "dryflow/mixture/corpus.hpp"
#include "dryflow/mixture/simulate.hpp"
#include "dryflow/mixture/toy_corpus.hpp"
#include "dryflow/nn/checkpoint.hpp"
#include "dryflow/semantic/drd.hpp"

namespace dryflow::app {

namespace fs = std::filesystem;

// Seed namespaces per pipeline stage; every random draw of a run derives
// from (run seed, stage, step, item).
enum Stage : std::uint64_t {
  kStageSimulate = 11,
  kStagePretrain = 12,
  kStageDrd = 13,
  kStageFlowData = 14,
  kStageStats = 15,
  kStageEnhance = 16,
  kStageFlowNoise = 17,
  kStageEncoderInit = 21,
  kStageFlowInit = 31,
  kStageHeldout = 41,
};

/// Worker count for per-utterance parallel loops (DRYFLOW_WORKERS, default 1).
inline int worker_count() {
  const char* env = std::getenv("DRYFLOW_WORKERS");
  if (!env || !*env) return 1;
  const int n = std::atoi(env);
  require(n >= 1 && n <= 256, ErrorKind::config, "DRYFLOW_WORKERS must be in [1, 256], got '", env, "'");
  return n;
}

/// Runs fn(i) for i in [0, n); the first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex m;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(m);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::uint64_t id_seed(std::uint64_t seed, const std::string& id) {
  return derive_seed(seed, nn::fnv1a(id.data(), id.size()));
}

// Data sources --------------------------------------------------------------

struct DataSources {
  std::shared_ptr<const AudioCorpus> speech;
  std::shared_ptr<const AudioCorpus> noise;
  std::shared_ptr<const AudioCorpus> rirs;
};

inline DataSources open_sources(const RunConfig& cfg) {
  require(!cfg.paths.speech_manifest.empty(), ErrorKind::config, "paths.speech_manifest is not set");
  require(!cfg.paths.noise_manifest.empty(), ErrorKind::config, "paths.noise_manifest is not set");
  DataSources s;
  s.speech = std::make_shared<ManifestCorpus>(cfg.paths.speech_manifest);
  s.noise = std::make_shared<ManifestCorpus>(cfg.paths.noise_manifest);
  if (cfg.paths.rir_manifest.empty()) {
    require(cfg.mixture.reverb_prob == 0.0, ErrorKind::config,
            "paths.rir_manifest is not set but mixture.reverb_prob > 0");
    s.rirs = std::make_shared<MemoryCorpus>();
  } else {
    s.rirs = std::make_shared<ManifestCorpus>(cfg.paths.rir_manifest);
  }
  require(s.speech->size() > 0, ErrorKind::data, "speech manifest lists no files");
  require(s.noise->size() > 0, ErrorKind::data, "noise manifest lists no files");
  return s;
}

inline TrainingPair draw_pair(const RunConfig& cfg, const DataSources& src, Stage stage, std::int64_t step,
                              std::size_t item, double segment_seconds) {
  MixtureConfig m = cfg.mixture;
  m.segment_seconds = segment_seconds;
  const std::uint64_t seed =
      derive_seed(derive_seed(derive_seed(cfg.seed, stage), static_cast<std::uint64_t>(step)), item);
  return sample_training_pair(seed, *src.speech, *src.noise, *src.rirs, m);
}

inline std::vector<TrainingPair> draw_batch(const RunConfig& cfg, const DataSources& src, Stage stage,
                                            std::int64_t step, const nn::OptimizerConfig& opt) {
  std::vector<TrainingPair> batch(static_cast<std::size_t>(opt.batch));
  parallel_for(batch.size(), [&](std::size_t i) { batch[i] = draw_pair(cfg, src, stage, step, i, opt.segment_seconds); });
  return batch;
}

// Normalization statistics ----------------------------------------------------

inline void save_mel_stats(const fs::path& path, const MelStats& stats, const MelConfig& mel) {
  nn::Checkpoint c;
  c.kind = nn::CheckpointKind::normalization;
  c.header["mel"] = to_json(mel);
  c.put<double>("mean", stats.mean);
  c.put<double>("stddev", stats.stddev);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  c.save(path);
}

inline MelStats load_mel_stats(const fs::path& path, const MelConfig& mel) {
  const auto c = nn::Checkpoint::load(path, nn::CheckpointKind::normalization);
  require(c.header.at("mel") == to_json(mel), ErrorKind::config, path.string(),
          ": statistics were computed for a different Mel configuration");
  MelStats s;
  s.mean = c.get<double>("mean");
  s.stddev = c.get<double>("stddev");
  return s;
}

/// Per-bin statistics of dry targets; loaded when present, else computed
/// from `stats_pairs` simulated pairs and saved.
inline MelStats ensure_mel_stats(const RunConfig& cfg, const DataSources& src, std::ostream& log) {
  const fs::path path = cfg.mel_stats_path();
  if (fs::exists(path)) return load_mel_stats(path, cfg.mel);
  const MatrixD fb = mel_filterbank(cfg.mel);
  std::vector<MatrixD> mels(static_cast<std::size_t>(cfg.stats_pairs));
  parallel_for(mels.size(), [&](std::size_t i) {
    mels[i] = log_mel(draw_pair(cfg, src, kStageStats, 0, i, cfg.mixture.segment_seconds).target, cfg.mel, fb).values;
  });
  const MelStats stats = MelStats::estimate(mels);
  save_mel_stats(path, stats, cfg.mel);
  log << "mel statistics from " << mels.size() << " targets -> " << path.string() << '\n';
  return stats;
}

inline void write_loss_csv(const fs::path& path, const std::vector<double>& loss, const nn::OptimizerConfig& opt,
                           int every = 1) {
  std::ofstream out(path);
  out << "step,loss,lr\n";
  for (std::size_t i = 0; i < loss.size(); ++i) {
    const auto step = static_cast<std::int64_t>(i) + 1;
    if (step % every != 0 && step != static_cast<std::int64_t>(loss.size())) continue;
    out << step << ',' << eval::format_real(loss[i]) << ',' << eval::format_real(opt.lr_at(step)) << '\n';
  }
}

// simulate -------------------------------------------------------------------

struct SimulateResult {
  fs::path metadata;
  std::size_t count = 0;
};

/// Writes `count` pairs as float WAVs (noisy, target, scaled noise) plus
/// metadata.csv under `out_dir`.
inline SimulateResult cmd_simulate(const RunConfig& cfg, std::size_t count, const fs::path& out_dir,
                                   std::ostream& log) {
  const DataSources src = open_sources(cfg);
  fs::create_directories(out_dir);
  std::vector<std::string> rows(count);
  parallel_for(count, [&](std::size_t i) {
    const TrainingPair p = draw_pair(cfg, src, kStageSimulate, 0, i, cfg.mixture.segment_seconds);
    char stem[32];
    std::snprintf(stem, sizeof stem, "pair%06zu", i);
    const std::string s(stem);
    write_wav(out_dir / (s + "_noisy.wav"), p.noisy);
    write_wav(out_dir / (s + "_target.wav"), p.target);
    write_wav(out_dir / (s + "_noise.wav"), Waveform(p.components.noise, kPipelineRate));
    rows[i] = s + ',' + std::to_string(p.seed) + ',' + src.speech->name(p.speech_index) + ',' +
              src.noise->name(p.noise_index) + ',' + (p.rir_index ? src.rirs->name(*p.rir_index) : "") + ',' +
              (p.spec.apply_reverb ? "1" : "0") + ',' + to_string(p.spec.target_mode) + ',' +
              eval::format_real(p.spec.snr_db) + ',' + eval::format_real(p.components.gain) + ',' + s +
              "_noisy.wav," + s + "_target.wav," + s + "_noise.wav";
  });
  std::ofstream meta(out_dir / "metadata.csv");
  meta << "id,seed,speech,noise,rir,reverb,target_mode,snr_db,clip_gain,noisy,target,noise_component\n";
  for (const auto& r : rows) meta << r << '\n';
  log << "simulated " << count << " pairs -> " << out_dir.string() << '\n';
  return {out_dir / "metadata.csv", count};
}

// encoder pretraining and DRD ---------------------------------------------------

using Encoder = semantic::ToyEncoder<float>;

inline fs::path cmd_pretrain_encoder(const RunConfig& cfg, std::ostream& log) {
  const DataSources src = open_sources(cfg);
  fs::create_directories(cfg.out());
  const MelStats stats = ensure_mel_stats(cfg, src, log);
  Encoder enc(cfg.encoder, derive_seed(cfg.seed, kStageEncoderInit));
  semantic::PretrainOptions objective = cfg.pretrain_objective;
  objective.seed = derive_seed(cfg.seed, kStagePretrain);
  const nn::OptimizerConfig& opt = cfg.pretrain.opt;
  semantic::SegmentStream segments = [&](std::int64_t step) {
    const auto batch = draw_batch(cfg, src, kStagePretrain, step, opt);
    std::vector<Waveform> out;
    for (const auto& p : batch) out.push_back(p.target);
    return out;
  };
  const auto history = semantic::pretrain_toy_encoder(enc, segments, stats, opt, objective,
                                                      [&](std::int64_t step, double loss, double lr) {
                                                        if (step % cfg.pretrain.log_every == 0)
                                                          log << "pretrain step " << step << " loss " << loss
                                                              << " lr " << lr << '\n';
                                                      });
  write_loss_csv(cfg.out() / "pretrain_loss.csv", history, opt);
  const fs::path path = cfg.pretrained_encoder_path();
  enc.save(path, static_cast<std::uint64_t>(opt.steps));
  log << "pretrained encoder -> " << path.string() << '\n';
  return path;
}

inline Encoder load_encoder(const fs::path& path, const std::string& hint) {
  require(fs::exists(path), ErrorKind::config, "encoder checkpoint ", path.string(), " not found; ", hint);
  return Encoder::load(path);
}

struct DrdOptions {
  bool pretrain_if_missing = false;
  bool resume = false;
  std::int64_t stop_after = -1;  // stop once this many total steps are done (simulates interruption)
};

struct DrdResult {
  fs::path encoder;  // empty when the run stopped early
  fs::path state;
  std::int64_t steps_done = 0;
  std::uint64_t student_checksum = 0;
  std::uint64_t teacher_checksum = 0;
};

inline DrdResult cmd_train_drd(const RunConfig& cfg, const DrdOptions& o, std::ostream& log) {
  fs::create_directories(cfg.out());
  if (!fs::exists(cfg.pretrained_encoder_path()) && o.pretrain_if_missing) cmd_pretrain_encoder(cfg, log);
  const Encoder teacher = load_encoder(cfg.pretrained_encoder_path(),
                                       "run `dryflow pretrain-encoder` or pass --pretrain to train one first");
  require(teacher.config() == cfg.encoder, ErrorKind::config,
          "pretrained encoder architecture does not match the run configuration");
  const DataSources src = open_sources(cfg);
  auto state = semantic::DRDState<float>::from_pretrained(teacher, cfg.seed);
  const fs::path state_path = cfg.out() / "drd_state.ckpt";
  if (o.resume && fs::exists(state_path)) {
    state.restore(nn::Checkpoint::load(state_path, nn::CheckpointKind::optimizer));
    log << "resuming DRD at step " << state.step << '\n';
  }
  const nn::OptimizerConfig& opt = cfg.drd.opt;
  std::int64_t target = opt.steps;
  if (o.stop_after >= 0) target = std::min(target, o.stop_after);
  semantic::PairStream pairs = [&](std::int64_t step) { return draw_batch(cfg, src, kStageDrd, step, opt); };
  semantic::drd_finetune(state, pairs, std::max<std::int64_t>(0, target - state.step), opt,
                         [&](std::int64_t step, double loss, double lr) {
                           if (step % cfg.drd.log_every == 0)
                             log << "drd step " << step << " loss " << loss << " lr " << lr << '\n';
                         });
  state.resume_checkpoint().save(state_path);
  write_loss_csv(cfg.out() / "drd_loss.csv", state.loss_history, opt);
  DrdResult r{{}, state_path, state.step, state.student.checksum(), state.teacher.checksum()};
  if (state.step == opt.steps) {
    r.encoder = cfg.drd_encoder_path();
    state.student.save(r.encoder, static_cast<std::uint64_t>(state.step));
    log << "DRD encoder -> " << r.encoder.string() << '\n';
  } else {
    log << "DRD stopped at step " << state.step << " of " << opt.steps << "; resume with --resume\n";
  }
  return r;
}

// flow matching ---------------------------------------------------------------

enum class Ablation { full, no_semantic, noisy_semantic, no_masking };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_semantic: return "no-semantic";
    case Ablation::noisy_semantic: return "noisy-semantic";
    case Ablation::no_masking: return "no-masking";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& s) {
  for (Ablation a : {Ablation::full, Ablation::no_semantic, Ablation::noisy_semantic, Ablation::no_masking})
    if (to_string(a) == s) return a;
  fail(ErrorKind::config, "unknown ablation '", s, "' (expected full, no-semantic, noisy-semantic or no-masking)");
}

inline fs::path default_flow_path(const RunConfig& cfg, Ablation a) {
  return a == Ablation::full ? cfg.flow_path() : cfg.out() / ("flow_" + to_string(a) + ".ckpt");
}

/// Conditioning encoder per variant: the DRD student for the full model and
/// the masking ablation, the pre-DRD encoder for the noisy-semantic variant.
inline std::optional<Encoder> conditioning_encoder(const RunConfig& cfg, Ablation a) {
  switch (a) {
    case Ablation::no_semantic: return std::nullopt;
    case Ablation::noisy_semantic:
      return load_encoder(cfg.pretrained_encoder_path(), "run `dryflow pretrain-encoder` first");
    default: return load_encoder(cfg.drd_encoder_path(), "run `dryflow train-drd` first");
  }
}

struct FlowTrainResult {
  fs::path checkpoint;
  std::uint64_t weight_checksum = 0;
  std::vector<double> loss;
};

inline FlowTrainResult cmd_train_fm(const RunConfig& cfg, Ablation ablation, const fs::path& out_path,
                                    std::ostream& log) {
  fs::create_directories(cfg.out());
  const DataSources src = open_sources(cfg);
  const MelStats stats = ensure_mel_stats(cfg, src, log);
  const std::optional<Encoder> encoder = conditioning_encoder(cfg, ablation);
  if (encoder)
    require(encoder->dim() == cfg.backbone.phonetic_dim, ErrorKind::config, "encoder dim ", encoder->dim(),
            " does not match backbone.phonetic_dim ", cfg.backbone.phonetic_dim);

  flow::FlowArtifact<float> art{flow::FlowModel<float>(cfg.backbone, derive_seed(cfg.seed, kStageFlowInit))};
  art.stats = stats;
  art.mel = cfg.mel;
  art.train.masks = cfg.masks;
  art.train.use_semantic = ablation != Ablation::no_semantic;
  art.train.use_masking = ablation != Ablation::no_masking;
  art.encoder_checksum = encoder ? encoder->checksum() : 0;

  const nn::OptimizerConfig& opt = cfg.fm.opt;
  const MatrixD fb = mel_filterbank(cfg.mel);
  nn::AdamW<float> adam(art.model.params());
  FlowTrainResult r;
  const fs::path snapshots = cfg.out() / "snapshots";
  for (std::int64_t step = 1; step <= opt.steps; ++step) {
    const auto pairs = draw_batch(cfg, src, kStageFlowData, step - 1, opt);
    std::vector<flow::FlowExample> batch(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
      batch[i] = flow::prepare_example(pairs[i], encoder ? &*encoder : nullptr, cfg.backbone.phonetic_dim, stats,
                                       cfg.mel, fb);
    });
    const double lr = opt.lr_at(step);
    double loss = 0.0;
    try {
      loss = flow::train_step(art.model, adam, batch,
                              derive_seed(derive_seed(cfg.seed, kStageFlowNoise), static_cast<std::uint64_t>(step)),
                              lr, opt, art.train);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric) throw;
      fail(ErrorKind::numeric, e.what(), " at flow step ", step, " (run seed ", cfg.seed, ")");
    }
    r.loss.push_back(loss);
    art.step = step;
    if (step % cfg.fm.log_every == 0) log << "fm[" << to_string(ablation) << "] step " << step << " loss " << loss << " lr " << lr << '\n';
    if (cfg.fm.snapshot_every > 0 && step % cfg.fm.snapshot_every == 0 && step < opt.steps) {
      fs::create_directories(snapshots);
      char name[64];
      std::snprintf(name, sizeof name, "flow_%s_step%06lld.ckpt", to_string(ablation).c_str(),
                    static_cast<long long>(step));
      art.save(snapshots / name);
    }
  }
  write_loss_csv(cfg.out() / ("fm_loss_" + to_string(ablation) + ".csv"), r.loss, opt, cfg.fm.log_every);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  art.save(out_path);
  r.checkpoint = out_path;
  r.weight_checksum = art.to_checkpoint().weight_checksum();
  log << "flow model (" << to_string(ablation) << ") -> " << out_path.string() << '\n';
  return r;
}

// enhance ---------------------------------------------------------------------

/// A loaded flow model together with the encoder it was trained against.
struct EnhancementModel {
  flow::FlowArtifact<float> artifact;
  std::optional<Encoder> encoder;
  MatrixD filterbank;

  int phonetic_dim() const { return artifact.model.config().phonetic_dim; }
};

/// Locates the conditioning encoder by checksum among the run's encoder
/// checkpoints; refuses to pair a flow model with a different encoder.
inline EnhancementModel load_enhancement_model(const RunConfig& cfg, const fs::path& flow_path) {
  require(fs::exists(flow_path), ErrorKind::config, "flow checkpoint ", flow_path.string(),
          " not found; run `dryflow train-fm` first");
  EnhancementModel m{flow::FlowArtifact<float>::load(flow_path), std::nullopt, {}};
  m.filterbank = mel_filterbank(m.artifact.mel);
  if (m.artifact.train.use_semantic) {
    for (const fs::path& p : {cfg.drd_encoder_path(), cfg.pretrained_encoder_path()}) {
      if (!fs::exists(p)) continue;
      Encoder e = Encoder::load(p);
      if (e.checksum() == m.artifact.encoder_checksum) {
        m.encoder = std::move(e);
        break;
      }
    }
    require(m.encoder.has_value(), ErrorKind::config, flow_path.string(),
            ": no encoder checkpoint with the fingerprint this model was trained against (checksum ",
            m.artifact.encoder_checksum, ")");
  }
  return m;
}

inline Waveform to_pipeline_rate(Waveform w, bool strict, const std::string& origin, std::ostream& log) {
  if (w.sample_rate == kPipelineRate) return w;
  require(!strict, ErrorKind::data, origin, ": sample rate ", w.sample_rate, " Hz (expected ", kPipelineRate,
          " Hz; strict mode)");
  log << "warning: " << origin << " is " << w.sample_rate << " Hz, resampling to " << kPipelineRate << " Hz\n";
  return resample(w, kPipelineRate);
}

/// Noisy waveform at 16 kHz -> enhanced waveform of the same length.
inline Waveform enhance_waveform(const EnhancementModel& m, const Waveform& noisy, int n_steps, int gl_iters,
                                 std::uint64_t seed) {
  const auto& a = m.artifact;
  const flow::FlowExample ex = flow::prepare_example(noisy, nullptr, m.encoder ? &*m.encoder : nullptr,
                                                     m.phonetic_dim(), a.stats, a.mel, m.filterbank);
  const MatrixD mel = flow::enhance_mel(a.model, ex, a.stats, n_steps, derive_seed(seed, 1));
  Waveform out = griffin_lim_invert(MelSpectrogram{mel, a.mel.frame_rate()}, a.mel, gl_iters, derive_seed(seed, 2));
  out.samples.resize(noisy.size(), 0.0);
  return out;
}

struct EnhanceItem {
  std::string id;
  fs::path input;
};

/// Accepts a single WAV (id = file stem), a test manifest (id, noisy,
/// reference) or an (id, path) list.
inline std::vector<EnhanceItem> enhance_inputs(const fs::path& input) {
  if (input.extension() == ".wav") return {{input.stem().string(), input}};
  std::ifstream in(input);
  require(in.good(), ErrorKind::data, "cannot open ", input.string());
  std::string first;
  std::getline(in, first);
  const auto fields = eval::detail::split_csv_line(first);
  std::vector<EnhanceItem> items;
  if (fields.size() == 3) {
    for (const auto& t : eval::read_test_manifest(input)) items.push_back({t.id, t.noisy});
  } else {
    for (const auto& [id, p] : eval::read_enhanced_manifest(input)) items.push_back({id, p});
  }
  return items;
}

/// Writes <out_dir>/<id>.wav per input and <out_dir>/enhanced.csv.
inline fs::path cmd_enhance(const RunConfig& cfg, const fs::path& flow_path, const std::vector<EnhanceItem>& items,
                            const fs::path& out_dir, int n_steps, std::uint64_t seed, std::ostream& log) {
  const EnhancementModel m = load_enhancement_model(cfg, flow_path);
  fs::create_directories(out_dir);
  std::mutex log_mutex;
  parallel_for(items.size(), [&](std::size_t i) {
    std::ostringstream local;
    const Waveform noisy = to_pipeline_rate(read_wav(items[i].input), cfg.strict_sample_rate,
                                            items[i].input.string(), local);
    const Waveform out = enhance_waveform(m, noisy, n_steps, cfg.griffin_lim_iters, id_seed(seed, items[i].id));
    write_wav(out_dir / (items[i].id + ".wav"), out);
    std::lock_guard lock(log_mutex);
    log << local.str();
  });
  const fs::path manifest = out_dir / "enhanced.csv";
  std::ofstream csv(manifest);
  csv << "id,path\n";
  for (const auto& it : items) csv << it.id << ',' << it.id << ".wav\n";
  log << "enhanced " << items.size() << " file(s) -> " << out_dir.string() << '\n';
  return manifest;
}

// evaluate / ablate -------------------------------------------------------------

/// The frozen pre-DRD encoder serves as the similarity reference.
inline Encoder evaluation_encoder(const RunConfig& cfg) {
  return load_encoder(cfg.pretrained_encoder_path(), "evaluation needs the pretrained encoder");
}

inline eval::MetricReport cmd_evaluate(const RunConfig& cfg, const fs::path& enhanced_manifest,
                                       const fs::path& test_manifest, const fs::path& out_dir, std::ostream& log) {
  const Encoder enc = evaluation_encoder(cfg);
  const MelStats stats = load_mel_stats(cfg.mel_stats_path(), cfg.mel);
  auto tests = eval::read_test_manifest(test_manifest);
  const auto enhanced = eval::read_enhanced_manifest(enhanced_manifest);
  require(tests.size() == enhanced.size(), ErrorKind::data, "row-count mismatch: ", tests.size(),
          " test items vs ", enhanced.size(), " enhanced files");
  std::sort(tests.begin(), tests.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& t : tests)
    require(enhanced.contains(t.id), ErrorKind::data, "no enhanced file for id ", t.id);
  const eval::Scorer scorer(cfg.mel, enc);
  std::vector<eval::UtteranceRecord> records(tests.size());
  parallel_for(tests.size(), [&](std::size_t i) {
    records[i] = scorer.score(tests[i].id, eval::load_pipeline_wav(tests[i].reference),
                              eval::load_pipeline_wav(enhanced.at(tests[i].id)),
                              eval::load_pipeline_wav(tests[i].noisy));
  });
  eval::MetricReport rep(eval::config_fingerprint(cfg.mel, stats, enc.checksum()));
  for (auto& r : records) rep.add(std::move(r));
  rep.write(out_dir);
  log << "evaluated " << tests.size() << " utterances -> " << out_dir.string() << '\n';
  return rep;
}

struct AblationResult {
  std::map<std::string, eval::MetricReport> reports;
  std::map<std::string, double> heldout_masked_loss;
};

/// Held-out masked velocity loss on the test set (same t, noise and masks for
/// every model).
inline double heldout_masked_loss(const EnhancementModel& m, const std::vector<eval::TestItem>& items,
                                  std::uint64_t seed, int draws = 4) {
  const auto& a = m.artifact;
  std::vector<flow::FlowExample> examples(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const Waveform noisy = eval::load_pipeline_wav(items[i].noisy);
    const Waveform ref = eval::load_pipeline_wav(items[i].reference);
    examples[i] = flow::prepare_example(noisy, &ref, m.encoder ? &*m.encoder : nullptr, m.phonetic_dim(), a.stats,
                                        a.mel, m.filterbank);
  });
  flow::FlowTrainConfig tc;
  tc.masks = a.train.masks;
  tc.use_semantic = a.train.use_semantic;
  return flow::evaluation_loss(a.model, examples, seed, tc, draws);
}

inline AblationResult cmd_ablate(const RunConfig& cfg, const std::vector<std::pair<std::string, fs::path>>& variants,
                                 const fs::path& test_manifest, const fs::path& out_dir, int n_steps,
                                 std::uint64_t seed, std::ostream& log) {
  require(!variants.empty(), ErrorKind::config, "ablate: no variants given");
  const Encoder enc = evaluation_encoder(cfg);
  const auto items = eval::read_test_manifest(test_manifest);
  std::map<std::string, EnhancementModel> models;
  std::vector<eval::AblationVariant> suite;
  AblationResult result;
  for (const auto& [name, path] : variants) {
    auto [it, inserted] = models.emplace(name, load_enhancement_model(cfg, path));
    require(inserted, ErrorKind::config, "duplicate variant ", name);
    const EnhancementModel& m = it->second;
    suite.push_back({name, eval::config_fingerprint(m.artifact.mel, m.artifact.stats, enc.checksum()),
                     [&m, &cfg, n_steps, seed](const eval::TestItem& item, const Waveform& noisy) {
                       return enhance_waveform(m, noisy, n_steps, cfg.griffin_lim_iters, id_seed(seed, item.id));
                     }});
    result.heldout_masked_loss[name] = heldout_masked_loss(m, items, derive_seed(seed, kStageHeldout));
    log << "variant " << name << ": held-out masked loss " << result.heldout_masked_loss[name] << '\n';
  }
  const eval::Scorer scorer(cfg.mel, enc);
  result.reports = eval::run_ablation_suite(suite, items, scorer);
  fs::create_directories(out_dir);
  for (const auto& [name, rep] : result.reports) rep.write(out_dir / name);
  const std::string baseline = result.reports.contains("full") ? "full" : variants.front().first;
  std::ofstream(out_dir / "comparison.csv") << eval::comparison_csv(result.reports, baseline);
  std::ofstream loss_csv(out_dir / "masked_loss.csv");
  loss_csv << "variant,heldout_masked_loss\n";
  for (const auto& [name, v] : result.heldout_masked_loss) loss_csv << name << ',' << eval::format_real(v) << '\n';
  log << "ablation reports -> " << out_dir.string() << '\n';
  return result;
}

// toy corpus ------------------------------------------------------------------

struct ToyCorpusFiles {
  fs::path speech_manifest;
  fs::path noise_manifest;
  fs::path rir_manifest;
  fs::path test_manifest;
};

/// Writes a synthetic corpus plus a held-out test set (separate utterances,
/// noise clips and RIRs) mixed at `test_snr_db`.
inline ToyCorpusFiles make_toy_corpus_files(const fs::path& dir, const ToyCorpusConfig& corpus_cfg, int test_count,
                                            double test_snr_db, double test_reverb_prob, std::ostream& log) {
  const ToyCorpus train = make_toy_corpus(corpus_cfg);
  ToyCorpusConfig held = corpus_cfg;
  held.seed = derive_seed(corpus_cfg.seed, 99);
  held.utterances_per_speaker = std::max(1, (test_count + corpus_cfg.speakers - 1) / corpus_cfg.speakers);
  held.noise_clips_per_kind = std::max(1, corpus_cfg.noise_clips_per_kind / 2);
  held.rirs = std::max(2, corpus_cfg.rirs / 2);
  const ToyCorpus test = make_toy_corpus(held);

  ToyCorpusFiles files{dir / "speech.txt", dir / "noise.txt", dir / "rirs.txt", dir / "test.csv"};
  auto dump = [&](const MemoryCorpus& c, const std::string& sub, const fs::path& manifest) {
    fs::create_directories(dir / sub);
    std::ofstream list(manifest);
    for (std::size_t i = 0; i < c.size(); ++i) {
      const fs::path rel = fs::path(sub) / (c.name(i) + ".wav");
      write_wav(dir / rel, c.load(i));
      list << rel.string() << '\n';
    }
  };
  dump(train.speech, "speech", files.speech_manifest);
  dump(train.noise, "noise", files.noise_manifest);
  dump(train.rirs, "rirs", files.rir_manifest);

  MixtureConfig mix;
  mix.snr_low = mix.snr_high = test_snr_db;
  mix.reverb_prob = test_reverb_prob;
  fs::create_directories(dir / "test");
  std::vector<eval::TestItem> items;
  for (int i = 0; i < test_count; ++i) {
    // One held-out utterance per test item, in speaker-interleaved order.
    MemoryCorpus one;
    const std::size_t pick = static_cast<std::size_t>((i % held.speakers) * held.utterances_per_speaker + i / held.speakers);
    one.add(test.speech.load(pick), test.speech.name(pick));
    const TrainingPair p = sample_training_pair(derive_seed(held.seed, 1000 + static_cast<std::uint64_t>(i)), one,
                                                test.noise, test.rirs, mix);
    char id[32];
    std::snprintf(id, sizeof id, "test%03d", i);
    const std::string s(id);
    write_wav(dir / "test" / (s + "_noisy.wav"), p.noisy);
    write_wav(dir / "test" / (s + "_dry.wav"), p.target);
    items.push_back({s, fs::path("test") / (s + "_noisy.wav"), fs::path("test") / (s + "_dry.wav")});
  }
  eval::write_test_manifest(files.test_manifest, items);
  log << "toy corpus: " << train.speech.size() << " utterances, " << train.noise.size() << " noise clips, "
      << train.rirs.size() << " RIRs, " << test_count << " test pairs -> " << dir.string() << '\n';
  return files;
}

}  // namespace dryflow::app
