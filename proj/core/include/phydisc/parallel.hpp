#pragma once

#include <cstddef>
#include <functional>

namespace phydisc {

/// Worker threads to use: PHYDISC_WORKERS if set, else hardware concurrency.
std::size_t worker_count();

/// Runs fn(0..n-1) across up to `workers` threads. Each index must write only
/// to its own output slot, so the result never depends on scheduling. The
/// first exception thrown by any index is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t workers = worker_count());

}  // namespace phydisc
