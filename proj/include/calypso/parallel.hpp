#pragma once

// Minimal fan-out over independent jobs. Results must not depend on the
// thread count; callers write to disjoint slots.

#include "calypso/grid.hpp"

#include <functional>

namespace calypso {

/// Worker count from CALYPSO_THREADS (default 1, capped at the hardware count).
Index thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = thread_count()).
/// The first exception thrown by any job is rethrown after all workers stop.
void parallel_for(Index n, const std::function<void(Index)>& fn, Index threads = 0);

} // namespace calypso
