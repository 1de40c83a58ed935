#include "brve/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace brve {

int thread_budget() {
  static const int budget = [] {
    if (const char* env = std::getenv("BRVE_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<int>(std::min(v, 256L));
      return 1;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
  }();
  return budget;
}

void parallel_for(std::int64_t n, int max_workers,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int workers =
      static_cast<int>(std::min<std::int64_t>({max_workers, thread_budget(), n}));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  // Contiguous block per worker; block boundaries depend only on n and the
  // worker count, and every index is written by exactly one worker.
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t b = w * chunk;
    const std::int64_t e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn) {
  parallel_for(n, thread_budget(), fn);
}

}  // namespace brve
