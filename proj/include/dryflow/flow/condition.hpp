// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dryflow/error.hpp"
#include "dryflow/flow/mask.hpp"
#include "dryflow/semantic/encoder.hpp"
#include "dryflow/tensor.hpp"

namespace dryflow::flow {

/// Frame-aligned conditioning in the normalized Mel domain. Masked frames of
/// the two Mel streams are zero; the phonetic sequence is never masked.
struct ConditionBundle {
  MatrixD phonetic;
  MatrixD phonetic_projected;  // empty unless a projection was supplied
  MatrixD noisy_mel;
  MatrixD clean_mel_context;
  InfillingMask mask_clean;
  InfillingMask mask_noisy;

  Eigen::Index frames() const { return noisy_mel.rows(); }
};

inline MatrixD zero_missing_rows(MatrixD m, const InfillingMask& mask) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    if (mask.missing[static_cast<std::size_t>(i)]) m.row(i).setZero();
  return m;
}

/// `projection` (dim x proj) may be empty, in which case the backbone applies
/// its own learned projection.
inline ConditionBundle assemble_condition(const MatrixD& phonetic, const MatrixD& noisy_mel, const MatrixD& clean_mel,
                                          InfillingMask mask_clean, InfillingMask mask_noisy,
                                          const MatrixD& projection = {}) {
  const Eigen::Index frames = noisy_mel.rows();
  require(phonetic.rows() == frames && clean_mel.rows() == frames && mask_clean.frames() == frames &&
              mask_noisy.frames() == frames,
          ErrorKind::data, "condition: frame mismatch (phonetic ", phonetic.rows(), ", noisy ", frames, ", clean ",
          clean_mel.rows(), ", masks ", mask_clean.frames(), "/", mask_noisy.frames(), ")");
  require(clean_mel.cols() == noisy_mel.cols(), ErrorKind::data, "condition: Mel bin mismatch");
  ConditionBundle c;
  c.phonetic = phonetic;
  if (projection.size() > 0) {
    require(projection.rows() == phonetic.cols(), ErrorKind::data, "condition: projection expects ",
            projection.rows(), "-dim input, got ", phonetic.cols());
    c.phonetic_projected = phonetic * projection;
  }
  c.noisy_mel = zero_missing_rows(noisy_mel, mask_noisy);
  c.clean_mel_context = zero_missing_rows(clean_mel, mask_clean);
  c.mask_clean = std::move(mask_clean);
  c.mask_noisy = std::move(mask_noisy);
  return c;
}

inline ConditionBundle assemble_condition(const semantic::PhoneticRepresentation& phonetic, const MatrixD& noisy_mel,
                                          const MatrixD& clean_mel, InfillingMask mask_clean,
                                          InfillingMask mask_noisy, const MatrixD& projection = {}) {
  return assemble_condition(phonetic.values, noisy_mel, clean_mel, std::move(mask_clean), std::move(mask_noisy),
                            projection);
}

/// Inference layout: every clean frame missing, noisy Mel fully visible.
inline ConditionBundle inference_condition(const MatrixD& phonetic, const MatrixD& noisy_mel) {
  const Eigen::Index frames = noisy_mel.rows();
  return assemble_condition(phonetic, noisy_mel, MatrixD::Zero(frames, noisy_mel.cols()), InfillingMask::all(frames),
                            InfillingMask::none(frames));
}

}  // namespace dryflow::flow
