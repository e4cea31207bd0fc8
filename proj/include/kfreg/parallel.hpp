#pragma once

#include <cstddef>
#include <functional>

namespace kfreg {

/// Process-wide worker count for parallel_for. 1 means sequential.
void set_thread_count(int n);
int thread_count();

/// Runs fn(i) for i in [0, n). Indices are split into contiguous chunks, one
/// per worker, and each index must write only to its own output slot. No
/// reduction happens here, so results are identical for every thread count.
/// Exceptions are rethrown from the lowest failing index. Nested calls run
/// sequentially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace kfreg
