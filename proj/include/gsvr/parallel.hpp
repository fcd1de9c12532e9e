#pragma once

#include <cstddef>
#include <functional>

namespace gsvr {

/// Worker count used when a caller passes threads <= 0.
int default_thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Tasks must write to
/// disjoint outputs; reductions happen afterwards in task order so results do
/// not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads = 0);

}  // namespace gsvr
