// Copyright (C) 2026 The dryflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace dryflow::app {

/// Keeps freed tensor buffers in the process heap instead of handing them back
/// to the kernel after every training step. No effect outside glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 32 * 1024 * 1024);
  mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

}  // namespace dryflow::app
