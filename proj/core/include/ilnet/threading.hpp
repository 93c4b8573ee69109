#pragma once

#include <cstdint>
#include <functional>

namespace ilnet {

// Worker count for internal parallelism. Reads ILNET_THREADS once; when the
// variable is unset, uses min(hardware_concurrency, 4).
int max_threads();

// Runs fn over disjoint contiguous chunks of [0, n). The partition depends
// only on n and the worker count, and every output index is written by
// exactly one invocation, so results are identical no matter how many
// threads execute.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace ilnet
