// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "dryflow/error.hpp"
#include "dryflow/rng.hpp"

namespace dryflow::flow {

/// Per-frame flags; `missing[i]` marks a hidden frame.
struct InfillingMask {
  std::vector<bool> missing;

  static InfillingMask span(Eigen::Index frames, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= frames, ErrorKind::data, "mask span [", start, ", ",
            start + count, ") outside ", frames, " frames");
    InfillingMask m;
    m.missing.assign(static_cast<std::size_t>(frames), false);
    std::fill_n(m.missing.begin() + start, count, true);
    return m;
  }
  static InfillingMask all(Eigen::Index frames) { return span(frames, 0, frames); }
  static InfillingMask none(Eigen::Index frames) { return span(frames, 0, 0); }

  Eigen::Index frames() const { return static_cast<Eigen::Index>(missing.size()); }
  Eigen::Index count() const { return static_cast<Eigen::Index>(std::count(missing.begin(), missing.end(), true)); }
  double ratio() const { return missing.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(frames()); }

  /// True when the missing frames form a single interval (or none).
  bool contiguous() const {
    const auto first = std::find(missing.begin(), missing.end(), true);
    if (first == missing.end()) return true;
    const auto after = std::find(first, missing.end(), false);
    return std::find(after, missing.end(), true) == missing.end();
  }
};

struct MaskRanges {
  double clean_low = 0.7;
  double clean_high = 1.0;
  double noisy_low = 0.5;
  double noisy_high = 1.0;

  void validate() const {
    require(0.0 <= clean_low && clean_low <= clean_high && clean_high <= 1.0, ErrorKind::config,
            "clean mask range must satisfy 0 <= low <= high <= 1");
    require(0.0 <= noisy_low && noisy_low <= noisy_high && noisy_high <= 1.0, ErrorKind::config,
            "noisy mask range must satisfy 0 <= low <= high <= 1");
  }
};

/// One contiguous span of round(frames * r) frames at a uniform offset.
inline InfillingMask contiguous_mask(Rng& rng, Eigen::Index frames, double r) {
  const auto count = static_cast<Eigen::Index>(std::llround(static_cast<double>(frames) * r));
  const auto start = static_cast<Eigen::Index>(rng.index(static_cast<std::uint64_t>(frames - count + 1)));
  return InfillingMask::span(frames, start, count);
}

/// (clean, noisy) masks drawn from independent child streams of `rng`.
inline std::pair<InfillingMask, InfillingMask> build_infilling_masks(Rng& rng, Eigen::Index frames,
                                                                     const MaskRanges& ranges = {}) {
  require(frames >= 2, ErrorKind::data, "infilling masks need at least 2 frames, got ", frames);
  ranges.validate();
  Rng clean_rng = rng.fork(1);
  Rng noisy_rng = rng.fork(2);
  rng.next_u64();
  const double rc = clean_rng.uniform(ranges.clean_low, ranges.clean_high);
  const double rn = noisy_rng.uniform(ranges.noisy_low, ranges.noisy_high);
  return {contiguous_mask(clean_rng, frames, rc), contiguous_mask(noisy_rng, frames, rn)};
}

}  // namespace dryflow::flow
