#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace geoloc {

// Worker-count knob; 0 resolves to hardware concurrency.
int parallel_threads();
void set_parallel_threads(int n);

// Runs fn(begin, end) over fixed-size chunks of [0, n). Chunk boundaries
// depend only on n, never on the thread count, and workers write to disjoint
// slots, so results are identical for any number of threads. Reductions over
// per-chunk outputs must be done by the caller in ascending chunk order.
// The first exception thrown by any chunk is rethrown on the calling thread.
template <typename Fn>
void parallel_for_chunks(std::size_t n, std::size_t chunk, Fn&& fn) {
  if (n == 0) return;
  const std::size_t n_chunks = (n + chunk - 1) / chunk;
  const int threads = static_cast<int>(
      std::min<std::size_t>(n_chunks, static_cast<std::size_t>(parallel_threads())));
  if (threads <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c)
      fn(c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        fn(c * chunk, std::min(n, (c + 1) * chunk));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace geoloc
