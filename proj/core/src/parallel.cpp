#include "cape/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cape {

int default_threads() {
  if (const char* env = std::getenv("CAPE_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_chunks(size_t n, size_t chunk,
                     const std::function<void(size_t, size_t, size_t)>& fn,
                     int threads) {
  if (n == 0) return;
  if (chunk == 0) chunk = 1;
  const size_t nchunks = chunk_count(n, chunk);
  if (threads <= 0) threads = default_threads();
  const size_t nthreads = std::min<size_t>(static_cast<size_t>(threads), nchunks);

  if (nthreads <= 1) {
    for (size_t c = 0; c < nchunks; ++c)
      fn(c * chunk, std::min(n, (c + 1) * chunk), c);
    return;
  }

  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      size_t c = next.fetch_add(1, std::memory_order_relaxed);
      if (c >= nchunks) return;
      try {
        fn(c * chunk, std::min(n, (c + 1) * chunk), c);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> team;
  team.reserve(nthreads - 1);
  for (size_t t = 1; t < nthreads; ++t) team.emplace_back(worker);
  worker();
  for (auto& t : team) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn, int threads) {
  if (n == 0) return;
  if (threads <= 0) threads = default_threads();
  // Small fixed chunks keep the team load-balanced without making results
  // depend on the thread count.
  size_t chunk = std::max<size_t>(1, n / (4 * static_cast<size_t>(threads) + 1));
  parallel_chunks(
      n, chunk,
      [&fn](size_t b, size_t e, size_t) {
        for (size_t i = b; i < e; ++i) fn(i);
      },
      threads);
}

} // namespace cape
