#pragma once

// Training allocates and frees the same large activation buffers every step.
// glibc serves those with mmap by default, which costs a page-fault storm per
// step; raising the thresholds keeps them on the heap.

#if __has_include(<malloc.h>)
#include <malloc.h>
#endif

namespace agvm {

inline void keep_large_allocations_on_heap() {
#if defined(M_TRIM_THRESHOLD)
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

}  // namespace agvm
