#pragma once

#include <cstddef>
#include <exception>
#include <functional>

namespace saligraph {

/// Worker count: SALIGRAPH_THREADS when set, else hardware concurrency,
/// capped by `requested` when nonzero.
std::size_t worker_count(std::size_t requested = 0);

/// Runs body(i) for i in [0, n) on up to `workers` threads. Results must be
/// written to per-index slots; the first exception is rethrown.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& body);

}  // namespace saligraph
