#pragma once

#include <cstdint>
#include <functional>

namespace brve {

// Worker cap for data-parallel loops: BRVE_THREADS if set (clamped to at
// least 1), otherwise hardware concurrency. Read once per process.
int thread_budget();

// Runs fn(begin, end) over disjoint ranges covering [0, n). Each index is
// owned by exactly one worker and processed in ascending order, so results
// are bitwise identical for any worker count. Runs inline when the budget
// is 1 or n is too small to be worth spawning threads.
void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

// Same, with an explicit worker cap (still subject to thread_budget()).
void parallel_for(std::int64_t n, int max_workers,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace brve
