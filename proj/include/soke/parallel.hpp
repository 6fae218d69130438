#pragma once

#include <cstddef>
#include <functional>

namespace soke {

/// Worker cap: SOKE_THREADS if set and positive, otherwise the hardware
/// concurrency (at least 1).
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = worker_count()).
/// Each index runs exactly once; results must be written to per-index slots.
/// The first exception thrown by any task is rethrown after all threads join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

}  // namespace soke
