#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lrmp {

/// Realizations per reduction chunk. Chunk boundaries depend only on this constant, so the
/// merged result is the same for any worker count.
inline constexpr std::int64_t kChunkSize = 512;

/// Number of worker threads to use when the caller passes 0.
inline int default_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Evaluate `work(begin, end)` on consecutive chunks [begin, end) of [0, n) using up to `workers`
/// threads, then fold the chunk results in ascending chunk order with `merge(acc, chunk)`.
template <typename Acc, typename Work, typename Merge>
Acc chunked_reduce(std::int64_t n, int workers, Work work, Merge merge) {
  const std::int64_t n_chunks = (n + kChunkSize - 1) / kChunkSize;
  std::vector<Acc> partial(static_cast<std::size_t>(n_chunks));
  if (workers <= 0) workers = default_workers();
  workers = static_cast<int>(std::min<std::int64_t>(workers, std::max<std::int64_t>(n_chunks, 1)));

  std::atomic<std::int64_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (;;) {
      const std::int64_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      try {
        partial[static_cast<std::size_t>(c)] = work(c * kChunkSize, std::min(n, (c + 1) * kChunkSize));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n_chunks);
      }
    }
  };

  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);

  Acc total{};
  for (auto& p : partial) merge(total, p);
  return total;
}

}  // namespace lrmp
