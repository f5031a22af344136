// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dryflow/audio/mel.hpp"
#include "dryflow/audio/resample.hpp"
#include "dryflow/audio/wav_io.hpp"
#include "dryflow/error.hpp"
#include "dryflow/eval/metrics.hpp"
#include "dryflow/nn/params.hpp"
#include "dryflow/semantic/encoder.hpp"

namespace dryflow::eval {

struct UtteranceRecord {
  std::string id;
  double lsd_db = 0.0;
  double mel_mse = 0.0;
  double semantic_cos = 0.0;
  double snr_in_db = 0.0;
  std::size_t cropped_samples = 0;
};

struct MetricSummary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names = {"lsd_db", "mel_mse", "semantic_cos", "snr_in_db"};
  return names;
}

inline double metric_value(const UtteranceRecord& r, const std::string& name) {
  if (name == "lsd_db") return r.lsd_db;
  if (name == "mel_mse") return r.mel_mse;
  if (name == "semantic_cos") return r.semantic_cos;
  if (name == "snr_in_db") return r.snr_in_db;
  fail(ErrorKind::config, "unknown metric ", name);
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Hash of everything that must agree for two reports to be comparable.
inline std::string config_fingerprint(const MelConfig& mel, const MelStats& stats, std::uint64_t encoder_checksum) {
  std::ostringstream os;
  os << mel.sample_rate << ' ' << mel.n_fft << ' ' << mel.win_length << ' ' << mel.hop << ' ' << mel.n_mels << ' '
     << format_real(mel.f_min) << ' ' << format_real(mel.f_max) << ' ' << format_real(mel.log_floor);
  const std::string text = os.str();
  std::uint64_t h = nn::fnv1a(text.data(), text.size());
  h = nn::fnv1a(stats.mean.data(), sizeof(double) * static_cast<std::size_t>(stats.mean.size()), h);
  h = nn::fnv1a(stats.stddev.data(), sizeof(double) * static_cast<std::size_t>(stats.stddev.size()), h);
  h = nn::fnv1a(&encoder_checksum, sizeof encoder_checksum, h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

class MetricReport {
 public:
  MetricReport() = default;
  explicit MetricReport(std::string fingerprint) : fingerprint_(std::move(fingerprint)) {}

  const std::string& fingerprint() const { return fingerprint_; }
  const std::vector<UtteranceRecord>& records() const { return records_; }
  void add(UtteranceRecord r) { records_.push_back(std::move(r)); }

  MetricSummary summary(const std::string& metric) const {
    MetricSummary s;
    s.count = records_.size();
    if (records_.empty()) return s;
    for (const auto& r : records_) s.mean += metric_value(r, metric);
    s.mean /= static_cast<double>(s.count);
    double var = 0.0;
    for (const auto& r : records_) var += std::pow(metric_value(r, metric) - s.mean, 2);
    s.std = std::sqrt(var / static_cast<double>(s.count));
    return s;
  }

  nlohmann::json aggregate() const {
    nlohmann::json j;
    j["fingerprint"] = fingerprint_;
    j["note"] = "proxy metrics: spectral and representation distances, not perceptual or ASR scores";
    for (const auto& m : metric_names()) {
      const MetricSummary s = summary(m);
      j["metrics"][m] = {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
    }
    std::size_t cropped = 0, max_crop = 0;
    for (const auto& r : records_) {
      cropped += r.cropped_samples > 0;
      max_crop = std::max(max_crop, r.cropped_samples);
    }
    j["center_crop"] = {{"utterances", cropped}, {"max_samples", max_crop}};
    return j;
  }

  std::string records_csv() const {
    std::string out = "id,lsd_db,mel_mse,semantic_cos,snr_in_db,cropped_samples\n";
    for (const auto& r : records_)
      out += r.id + ',' + format_real(r.lsd_db) + ',' + format_real(r.mel_mse) + ',' + format_real(r.semantic_cos) +
             ',' + format_real(r.snr_in_db) + ',' + std::to_string(r.cropped_samples) + '\n';
    return out;
  }

  /// Writes records.csv and aggregate.json into `dir`.
  void write(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "records.csv") << records_csv();
    std::ofstream(dir / "aggregate.json") << aggregate().dump(2) << '\n';
  }

 private:
  std::string fingerprint_;
  std::vector<UtteranceRecord> records_;
};

/// Shared state for scoring utterances against dry references.
struct Scorer {
  MelConfig mel;
  MatrixD filterbank;
  const semantic::PhoneticEncoder* encoder = nullptr;

  Scorer(MelConfig cfg, const semantic::PhoneticEncoder& enc)
      : mel(cfg), filterbank(mel_filterbank(cfg)), encoder(&enc) {}

  /// `noisy` supplies snr_in_db (reference versus noisy - reference).
  UtteranceRecord score(const std::string& id, const Waveform& reference, const Waveform& hypothesis,
                        const Waveform& noisy) const {
    UtteranceRecord r;
    r.id = id;
    const CropResult c = center_crop_pair(reference, hypothesis);
    r.cropped_samples = c.dropped;
    const MatrixD mr = log_mel(c.a, mel, filterbank).values;
    const MatrixD mh = log_mel(c.b, mel, filterbank).values;
    r.lsd_db = lsd(mr, mh);
    r.mel_mse = mel_mse(mr, mh);
    r.semantic_cos = frame_cosine(encoder->encode(c.a).values, encoder->encode(c.b).values);
    const CropResult cn = center_crop_pair(reference, noisy);
    std::vector<double> residual(cn.a.size());
    for (std::size_t i = 0; i < residual.size(); ++i) residual[i] = cn.b.samples[i] - cn.a.samples[i];
    r.snr_in_db = measure_snr(cn.a.samples, residual);
    return r;
  }
};

struct TestItem {
  std::string id;
  std::filesystem::path noisy;
  std::filesystem::path reference;
};

namespace detail {
inline std::vector<std::string> split_csv_line(std::string line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::size_t columns,
                                                      const std::string& first_header) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::data, "cannot open ", path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto f = split_csv_line(line);
    if (f.empty() || (f.size() == 1 && f[0].empty())) continue;
    if (lineno == 1 && f[0] == first_header) continue;
    require(f.size() == columns, ErrorKind::data, path.string(), ":", lineno, ": expected ", columns, " fields, got ",
            f.size());
    rows.push_back(std::move(f));
  }
  return rows;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() ? base.parent_path() / path : path;
}
}  // namespace detail

/// CSV with columns id, noisy, reference (optional header row).
inline std::vector<TestItem> read_test_manifest(const std::filesystem::path& path) {
  std::vector<TestItem> items;
  for (auto& f : detail::read_csv(path, 3, "id"))
    items.push_back({f[0], detail::resolve(path, f[1]), detail::resolve(path, f[2])});
  return items;
}

inline void write_test_manifest(const std::filesystem::path& path, const std::vector<TestItem>& items) {
  std::ofstream out(path);
  out << "id,noisy,reference\n";
  for (const auto& it : items) out << it.id << ',' << it.noisy.string() << ',' << it.reference.string() << '\n';
}

/// CSV with columns id, path (optional header row).
inline std::map<std::string, std::filesystem::path> read_enhanced_manifest(const std::filesystem::path& path) {
  std::map<std::string, std::filesystem::path> out;
  for (auto& f : detail::read_csv(path, 2, "id")) {
    require(!out.contains(f[0]), ErrorKind::data, path.string(), ": duplicate id ", f[0]);
    out[f[0]] = detail::resolve(path, f[1]);
  }
  return out;
}

/// Reads a WAV and brings it to the pipeline rate.
inline Waveform load_pipeline_wav(const std::filesystem::path& path) {
  Waveform w = read_wav(path);
  return w.sample_rate == kPipelineRate ? w : resample(w, kPipelineRate);
}

/// Produces the enhanced waveform for one test item.
using Enhancer = std::function<Waveform(const TestItem& item, const Waveform& noisy)>;

struct AblationVariant {
  std::string name;
  std::string fingerprint;
  Enhancer enhance;
};

/// Per-metric deltas of each variant against `baseline` (variant - baseline).
inline std::string comparison_csv(const std::map<std::string, MetricReport>& reports, const std::string& baseline) {
  require(reports.contains(baseline), ErrorKind::data, "comparison: no baseline variant '", baseline, "'");
  const MetricReport& base = reports.at(baseline);
  std::string out = "variant";
  for (const auto& m : metric_names()) out += ',' + m + "_mean," + m + "_delta";
  out += '\n';
  for (const auto& [name, rep] : reports) {
    out += name;
    for (const auto& m : metric_names()) {
      const double v = rep.summary(m).mean;
      out += ',' + format_real(v) + ',' + format_real(v - base.summary(m).mean);
    }
    out += '\n';
  }
  return out;
}

/// Scores every variant on the same items. All variants must share one
/// fingerprint.
inline std::map<std::string, MetricReport> run_ablation_suite(const std::vector<AblationVariant>& variants,
                                                              const std::vector<TestItem>& items,
                                                              const Scorer& scorer) {
  require(!variants.empty(), ErrorKind::config, "ablation suite: no variants");
  std::map<std::string, MetricReport> reports;
  for (const auto& v : variants)
    require(v.fingerprint == variants.front().fingerprint, ErrorKind::config, "variant '", v.name,
            "' has fingerprint ", v.fingerprint, ", expected ", variants.front().fingerprint,
            " (non-comparable runs)");
  std::vector<std::pair<Waveform, Waveform>> audio;
  for (const auto& it : items) audio.emplace_back(load_pipeline_wav(it.noisy), load_pipeline_wav(it.reference));
  for (const auto& v : variants) {
    MetricReport rep(v.fingerprint);
    for (std::size_t i = 0; i < items.size(); ++i)
      rep.add(scorer.score(items[i].id, audio[i].second, v.enhance(items[i], audio[i].first), audio[i].first));
    require(reports.emplace(v.name, std::move(rep)).second, ErrorKind::config, "duplicate variant ", v.name);
  }
  return reports;
}

}  // namespace dryflow::eval
