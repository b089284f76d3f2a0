#pragma once

#include <cstddef>
#include <functional>

namespace nowcast {

// Worker count from NOWCAST_THREADS; 1 when unset or invalid.
int thread_count();

// Runs body(begin, end) over contiguous chunks of [0, n). Chunking depends
// only on n and the thread count, and callers must make each index's work
// independent of chunk boundaries so results match serial execution.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  int threads = thread_count());

}  // namespace nowcast
