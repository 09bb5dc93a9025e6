#pragma once

#include <cstddef>
#include <functional>

namespace eqxai {

/// Worker count: EQXAI_THREADS when set (>= 1), otherwise hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n) on up to worker_count() threads.
/// Each index is visited exactly once; callers write results into
/// pre-sized slots so the outcome does not depend on scheduling.
/// The first exception thrown by any body is rethrown on the caller.
/// Calls made from inside a body run serially on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace eqxai
