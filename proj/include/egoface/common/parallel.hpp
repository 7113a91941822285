#pragma once

#include <cstddef>
#include <functional>

namespace egoface {

/// Worker thread cap: EGOFACE_THREADS if set and positive, else hardware concurrency.
int worker_threads();

/// Runs body(i) for i in [0, n) on up to worker_threads() threads. Each index is
/// processed exactly once; callers must write results into per-index slots so the
/// outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

} // namespace egoface
