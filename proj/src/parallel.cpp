#include "nsrf/parallel.hpp"

#include <atomic>
#include <thread>
#include <vector>

#include "nsrf/check.hpp"

namespace nsrf {

namespace {
int g_threads = 1;
}

void set_num_threads(int n) {
  NSRF_CHECK(n >= 1, "thread count must be >= 1, got {}", n);
  g_threads = n;
}

int num_threads() { return g_threads; }

void parallel_chunks(int64_t n_chunks, const std::function<void(int64_t)>& fn) {
  if (n_chunks <= 0) return;
  const int workers = static_cast<int>(std::min<int64_t>(g_threads, n_chunks));
  if (workers <= 1) {
    for (int64_t i = 0; i < n_chunks; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const int64_t i = next.fetch_add(1, std::memory_order_relaxed);
        if (i >= n_chunks) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace nsrf
