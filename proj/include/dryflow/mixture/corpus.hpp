// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "dryflow/audio/resample.hpp"
#include "dryflow/audio/wav_io.hpp"
#include "dryflow/error.hpp"

namespace dryflow {

/// Read-only indexed collection of utterances at the pipeline rate.
class AudioCorpus {
 public:
  virtual ~AudioCorpus() = default;
  virtual std::size_t size() const = 0;
  virtual Waveform load(std::size_t index) const = 0;
  virtual std::string name(std::size_t index) const = 0;
};

class MemoryCorpus final : public AudioCorpus {
 public:
  MemoryCorpus() = default;
  explicit MemoryCorpus(std::vector<Waveform> items, std::vector<std::string> names = {})
      : items_(std::move(items)), names_(std::move(names)) {
    if (names_.empty())
      for (std::size_t i = 0; i < items_.size(); ++i) names_.push_back("mem:" + std::to_string(i));
    require(names_.size() == items_.size(), ErrorKind::config, "corpus names/items size mismatch");
  }

  void add(Waveform w, std::string name) {
    items_.push_back(std::move(w));
    names_.push_back(std::move(name));
  }

  std::size_t size() const override { return items_.size(); }
  Waveform load(std::size_t i) const override { return items_.at(i); }
  std::string name(std::size_t i) const override { return names_.at(i); }

 private:
  std::vector<Waveform> items_;
  std::vector<std::string> names_;
};

/// Plain-text manifest, one WAV path per line. Blank lines and lines starting
/// with '#' are skipped; relative paths resolve against the manifest's folder.
inline std::vector<std::filesystem::path> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  require(in.good(), ErrorKind::data, "cannot open manifest ", manifest.string());
  std::vector<std::filesystem::path> paths;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    std::filesystem::path p(line);
    if (p.is_relative()) p = manifest.parent_path() / p;
    paths.push_back(p);
  }
  return paths;
}

/// Loads lazily and resamples to 16 kHz; decoded files are cached.
class ManifestCorpus final : public AudioCorpus {
 public:
  explicit ManifestCorpus(const std::filesystem::path& manifest, int rate = kPipelineRate)
      : paths_(read_manifest(manifest)), rate_(rate) {}

  std::size_t size() const override { return paths_.size(); }
  std::string name(std::size_t i) const override { return paths_.at(i).string(); }

  Waveform load(std::size_t i) const override {
    std::lock_guard lock(mutex_);
    auto it = cache_.find(i);
    if (it != cache_.end()) return it->second;
    Waveform w = read_wav(paths_.at(i));
    if (w.sample_rate != rate_) w = resample(w, rate_);
    return cache_.emplace(i, std::move(w)).first->second;
  }

 private:
  std::vector<std::filesystem::path> paths_;
  int rate_;
  mutable std::mutex mutex_;
  mutable std::map<std::size_t, Waveform> cache_;
};

}  // namespace dryflow
