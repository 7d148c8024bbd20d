#pragma once

#include <cstdint>
#include <functional>

namespace healswin {

/// Worker count: HEALSWIN_THREADS if set (min 1), else hardware concurrency.
int worker_threads();

/// Runs fn(begin, end) over disjoint chunks of [0, n). Chunk boundaries
/// depend only on n and the worker count, and every output element is
/// written by exactly one chunk, so results do not depend on scheduling.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace healswin
