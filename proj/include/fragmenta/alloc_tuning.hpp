#pragma once
// Training and matching allocate and free many mid-sized Eigen temporaries.
// With glibc defaults each one is an mmap/munmap pair, so keep them on the heap.

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace fragmenta {

inline void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
#endif
}

} // namespace fragmenta
