#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace anisdf {

// Worker cap: explicit argument > ANISDF_THREADS env > hardware concurrency.
int effective_threads(int requested = 0);
void set_thread_cap(int cap);  // 0 clears the override

// Runs fn(0..n-1) on a transient pool. Tasks must be independent; results
// written to per-index slots stay deterministic under any worker count.
void parallel_for(int n, const std::function<void(int)>& fn, int threads = 0);

}  // namespace anisdf
