// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "dryflow/app/config.hpp"
#include "dryflow/app/pipeline.hpp"
#include "dryflow/app/runtime.hpp"
#include "dryflow/error.hpp"

namespace fs = std::filesystem;
using namespace dryflow;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::string profile = "desk";
};

app::RunConfig resolve(const Common& c) {
  app::RunConfig cfg = c.config.empty() ? app::profile_defaults(c.profile) : app::load_run_config(c.config, c.profile);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.output.empty()) cfg.paths.output_dir = c.output;
  cfg.validate();
  return cfg;
}

/// Records the fully resolved configuration next to the run's artifacts.
void record(const app::RunConfig& cfg) { app::save_run_config(cfg.out() / "config.json", cfg); }

std::pair<std::string, fs::path> parse_variant(const std::string& spec) {
  const auto eq = spec.find('=');
  require(eq != std::string::npos && eq > 0 && eq + 1 < spec.size(), ErrorKind::config, "variant '", spec,
          "' must look like name=checkpoint");
  return {spec.substr(0, eq), spec.substr(eq + 1)};
}

}  // namespace

int main(int argc, char** argv) {
  app::tune_allocator();
  CLI::App cli{"dryflow: dry-target flow-matching speech enhancement at desk scale"};
  cli.require_subcommand(1);
  cli.fallthrough();
  Common common;
  cli.add_option("--config", common.config, "JSON run configuration");
  cli.add_option("--seed", common.seed, "run seed (overrides the config)");
  cli.add_option("--output", common.output, "output directory (overrides paths.output_dir)");
  cli.add_option("--profile", common.profile, "default profile")->check(CLI::IsMember({"desk", "paper"}));

  auto* config_cmd = cli.add_subcommand("config", "print the resolved configuration with every default");

  std::string toy_dir;
  ToyCorpusConfig toy;
  int test_count = 50;
  double test_snr = 0.0, test_reverb = 0.8;
  auto* toy_cmd = cli.add_subcommand("make-toy-corpus", "write a synthetic corpus, manifests and a test set");
  toy_cmd->add_option("dir", toy_dir, "destination directory")->required();
  toy_cmd->add_option("--speakers", toy.speakers)->capture_default_str();
  toy_cmd->add_option("--utterances", toy.utterances_per_speaker, "utterances per speaker")->capture_default_str();
  toy_cmd->add_option("--seconds", toy.utterance_seconds, "utterance duration")->capture_default_str();
  toy_cmd->add_option("--noise-clips", toy.noise_clips_per_kind, "clips per noise type")->capture_default_str();
  toy_cmd->add_option("--rirs", toy.rirs)->capture_default_str();
  toy_cmd->add_option("--test-count", test_count)->capture_default_str();
  toy_cmd->add_option("--test-snr", test_snr, "test-set SNR in dB")->capture_default_str();
  toy_cmd->add_option("--test-reverb", test_reverb, "test-set reverb probability")->capture_default_str();

  std::size_t sim_count = 0;
  std::string sim_dir;
  auto* sim_cmd = cli.add_subcommand("simulate", "materialize training pairs with metadata");
  sim_cmd->add_option("--count", sim_count, "number of pairs")->required();
  sim_cmd->add_option("--dir", sim_dir, "destination (default <output>/simulated)");

  auto* pre_cmd = cli.add_subcommand("pretrain-encoder", "train the toy phonetic encoder on dry speech");

  app::DrdOptions drd_opts;
  auto* drd_cmd = cli.add_subcommand("train-drd", "denoising representation distillation of the encoder");
  drd_cmd->add_flag("--pretrain", drd_opts.pretrain_if_missing, "pretrain the encoder first when missing");
  drd_cmd->add_flag("--resume", drd_opts.resume, "continue from <output>/drd_state.ckpt");
  drd_cmd->add_option("--stop-after", drd_opts.stop_after, "stop once this many steps are done");

  std::string ablation = "full", fm_out;
  auto* fm_cmd = cli.add_subcommand("train-fm", "train the flow-matching model");
  fm_cmd->add_option("--ablation", ablation, "full | no-semantic | noisy-semantic | no-masking")
      ->capture_default_str();
  fm_cmd->add_option("--checkpoint", fm_out, "output checkpoint path");

  std::string enh_input, enh_flow, enh_out;
  int n_steps = -1;
  std::uint64_t sample_seed = 0;
  auto* enh_cmd = cli.add_subcommand("enhance", "enhance a WAV file or a manifest of files");
  enh_cmd->add_option("--input", enh_input, "WAV file, test manifest or id,path list")->required();
  enh_cmd->add_option("--flow", enh_flow, "flow checkpoint (default from config)");
  enh_cmd->add_option("--out", enh_out, "destination (default <output>/enhanced)");
  enh_cmd->add_option("--steps", n_steps, "Euler steps (default sampling_steps)");
  enh_cmd->add_option("--sample-seed", sample_seed, "sampling seed")->capture_default_str();

  std::string ev_enhanced, ev_test, ev_out;
  auto* ev_cmd = cli.add_subcommand("evaluate", "score enhanced files against dry references");
  ev_cmd->add_option("--enhanced", ev_enhanced, "id,path manifest")->required();
  ev_cmd->add_option("--test", ev_test, "id,noisy,reference manifest")->required();
  ev_cmd->add_option("--out", ev_out, "report directory (default <output>/report)");

  std::vector<std::string> variants;
  std::string ab_test, ab_out;
  auto* ab_cmd = cli.add_subcommand("ablate", "enhance and score several flow checkpoints on one test set");
  ab_cmd->add_option("--variant", variants, "name=checkpoint (repeatable)")->required();
  ab_cmd->add_option("--test", ab_test, "id,noisy,reference manifest")->required();
  ab_cmd->add_option("--out", ab_out, "report directory (default <output>/ablation)");
  ab_cmd->add_option("--steps", n_steps, "Euler steps (default sampling_steps)");
  ab_cmd->add_option("--sample-seed", sample_seed, "sampling seed")->capture_default_str();

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = cli.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::ostream& log = std::cerr;
    if (config_cmd->parsed()) {
      std::cout << app::to_json(resolve(common)).dump(2) << '\n';
    } else if (toy_cmd->parsed()) {
      toy.seed = common.seed.value_or(0);
      const auto files = app::make_toy_corpus_files(toy_dir, toy, test_count, test_snr, test_reverb, log);
      app::RunConfig cfg = resolve(common);
      cfg.paths.speech_manifest = fs::absolute(files.speech_manifest).string();
      cfg.paths.noise_manifest = fs::absolute(files.noise_manifest).string();
      cfg.paths.rir_manifest = fs::absolute(files.rir_manifest).string();
      if (common.output.empty()) cfg.paths.output_dir = fs::absolute(fs::path(toy_dir) / "run").string();
      app::save_run_config(fs::path(toy_dir) / "config.json", cfg);
      log << "config with corpus paths -> " << (fs::path(toy_dir) / "config.json").string() << '\n';
    } else if (sim_cmd->parsed()) {
      const auto cfg = resolve(common);
      record(cfg);
      app::cmd_simulate(cfg, sim_count, sim_dir.empty() ? cfg.out() / "simulated" : fs::path(sim_dir), log);
    } else if (pre_cmd->parsed()) {
      const auto cfg = resolve(common);
      record(cfg);
      app::cmd_pretrain_encoder(cfg, log);
    } else if (drd_cmd->parsed()) {
      const auto cfg = resolve(common);
      record(cfg);
      app::cmd_train_drd(cfg, drd_opts, log);
    } else if (fm_cmd->parsed()) {
      const auto cfg = resolve(common);
      record(cfg);
      const app::Ablation a = app::parse_ablation(ablation);
      app::cmd_train_fm(cfg, a, fm_out.empty() ? app::default_flow_path(cfg, a) : fs::path(fm_out), log);
    } else if (enh_cmd->parsed()) {
      const auto cfg = resolve(common);
      app::cmd_enhance(cfg, enh_flow.empty() ? cfg.flow_path() : fs::path(enh_flow), app::enhance_inputs(enh_input),
                       enh_out.empty() ? cfg.out() / "enhanced" : fs::path(enh_out),
                       n_steps > 0 ? n_steps : cfg.sampling_steps, sample_seed, log);
    } else if (ev_cmd->parsed()) {
      const auto cfg = resolve(common);
      const auto rep = app::cmd_evaluate(cfg, ev_enhanced, ev_test, ev_out.empty() ? cfg.out() / "report" : fs::path(ev_out), log);
      std::cout << rep.aggregate().dump(2) << '\n';
    } else if (ab_cmd->parsed()) {
      const auto cfg = resolve(common);
      std::vector<std::pair<std::string, fs::path>> list;
      for (const auto& v : variants) list.push_back(parse_variant(v));
      const auto res = app::cmd_ablate(cfg, list, ab_test, ab_out.empty() ? cfg.out() / "ablation" : fs::path(ab_out),
                                       n_steps > 0 ? n_steps : cfg.sampling_steps, sample_seed, log);
      std::cout << eval::comparison_csv(res.reports, res.reports.contains("full") ? "full" : list.front().first);
    }
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
