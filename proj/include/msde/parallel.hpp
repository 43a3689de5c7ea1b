#pragma once

#include <cstddef>
#include <functional>

namespace msde {

// Worker count used when a caller passes 0: MSDE_THREADS if set, otherwise
// the hardware concurrency.
std::size_t default_threads();

void set_default_threads(std::size_t n);

// Runs body(task) for task in [0, n_tasks). Tasks are claimed dynamically, so
// bodies must write to task-owned storage; the result is then independent of
// the worker count. The first exception thrown by any task is rethrown.
void parallel_for(std::size_t n_tasks, std::size_t threads, const std::function<void(std::size_t)> &body);

}  // namespace msde
