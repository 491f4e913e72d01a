#pragma once

// Process-level tuning for executables that train models.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace symoden {

/// Tape nodes are large, short-lived matrices. glibc serves those with
/// mmap/munmap by default, paying a page fault per touch; keeping them on
/// the heap is several times faster for training workloads.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace symoden
