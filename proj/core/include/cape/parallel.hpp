#pragma once

#include <cstddef>
#include <functional>

namespace cape {

/// Worker count: CAPE_THREADS env var if set, else hardware concurrency.
int default_threads();

/// Runs fn(i) for i in [0, n) on a transient thread team. fn must not
/// touch shared mutable state without its own synchronization. Exceptions
/// are captured and rethrown on the calling thread.
void parallel_for(size_t n, const std::function<void(size_t)>& fn, int threads = 0);

/// Runs fn(begin, end, chunk_idx) over fixed-size chunks of [0, n).
/// Chunk boundaries depend only on (n, chunk), never on the thread count,
/// so per-chunk partial reductions combined in chunk order give results
/// independent of scheduling.
void parallel_chunks(size_t n, size_t chunk,
                     const std::function<void(size_t, size_t, size_t)>& fn,
                     int threads = 0);

inline size_t chunk_count(size_t n, size_t chunk) { return chunk == 0 ? 0 : (n + chunk - 1) / chunk; }

} // namespace cape
