#pragma once

#include <cstddef>
#include <functional>

namespace flowgrad {

/// Worker count: hardware concurrency, capped by FLOWGRAD_THREADS if set.
std::size_t worker_count();

/// Runs task(i) for i in [0, n) on up to worker_count() threads. The first
/// exception thrown by any task is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task);

} // namespace flowgrad
