#pragma once

#include <cstddef>
#include <functional>

namespace arratia {

/// Logical cores, at least one.
std::size_t default_threads();

/// Runs body(i) for i in [0, count) on a pool of `threads` workers (0 = default).
/// The first exception thrown by any body is rethrown after all workers stop.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body);

}  // namespace arratia
