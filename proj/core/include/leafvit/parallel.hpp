#pragma once

#include <cstddef>
#include <functional>

namespace leafvit {

/// Worker cap: LEAFVIT_THREADS if set (>= 1), else hardware concurrency.
std::size_t worker_threads();
/// Overrides the cap for this process; 0 restores the environment default.
void set_worker_threads(std::size_t n);

/// Splits [0, n) into contiguous chunks run on up to worker_threads()
/// threads. Chunks must write disjoint outputs; results are then independent
/// of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t begin, std::size_t end)>& body);

}  // namespace leafvit
