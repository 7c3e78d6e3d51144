#pragma once

#include <cstddef>
#include <functional>

namespace tst {

/// Worker cap: TST_THREADS when set to a positive integer, else the number of
/// logical CPUs (at least 1).
int worker_count();

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = worker_count()).
/// Each index runs exactly once; callers write results into disjoint slots.
/// The first exception thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int workers = 0);

}  // namespace tst
