#pragma once

#include <cstddef>
#include <functional>

namespace rsvc {

/// Worker cap for parallel_for: ROBUSTSVC_THREADS when set (minimum 1),
/// otherwise the hardware concurrency.
int max_threads();

/// Runs fn(0..n-1), splitting contiguous index ranges across up to
/// max_threads() workers. Each index must touch only its own outputs; with
/// that contract results are identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace rsvc
