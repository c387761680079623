#pragma once

#include <mutex>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vsync {

/// Keeps large activation buffers on the heap instead of fresh mmap pages.
/// Without this glibc maps and unmaps every multi-megabyte im2col buffer and
/// the page faults dominate a forward pass. No-op off glibc.
inline void tune_allocator() {
#if defined(__GLIBC__)
  static std::once_flag once;
  std::call_once(once, [] {
    mallopt(M_MMAP_THRESHOLD, 256 << 20);
    mallopt(M_TRIM_THRESHOLD, 512 << 20);
  });
#endif
}

}  // namespace vsync
