#pragma once

#include <functional>

namespace onarch {

/// 0 restores the default (hardware concurrency).
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs fn(i) for i in [0, n) across the configured threads with a
/// static partition. Results must be written to disjoint slots; any
/// reduction over them must happen afterwards in index order, so the
/// outcome is independent of the thread count.
void parallel_over(long n, const std::function<void(long)>& fn);

} // namespace onarch
