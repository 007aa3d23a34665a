#pragma once

#include <functional>

namespace xvfg {

/// Worker cap from XVFG_THREADS (default 1). Read once per process.
int thread_count();

/// Overrides the worker cap for the rest of the process (tests, bindings).
void set_thread_count(int threads);

/// Runs fn(i) for i in [0, count). Each index must write disjoint memory;
/// callers reduce per-index partials in index order so results do not
/// depend on the worker count.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace xvfg
