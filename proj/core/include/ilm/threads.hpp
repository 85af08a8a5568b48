#pragma once

#include <cstddef>
#include <functional>

namespace ilm {

// Worker count resolution order: explicit argument, ILM_NPE_THREADS, then
// hardware concurrency. A value of 1 runs everything inline.
unsigned thread_count(unsigned requested = 0);

// Splits [0, n) into contiguous chunks, one worker per chunk. The function
// receives half-open [begin, end) ranges. Results must not depend on the
// chunking, so callers keep per-index state (own RNG substream, own output
// slot) and reduce in index order afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                  unsigned requested_threads = 0);

} // namespace ilm
