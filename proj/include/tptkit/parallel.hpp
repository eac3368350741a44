#pragma once

#include <cstddef>
#include <functional>

namespace tptkit {

/// Worker count: `TPTKIT_THREADS` if set and positive, else hardware threads.
int thread_count();

/// Static-partition parallel loop over [begin, end). Each index is visited
/// exactly once; callers must only write to index-owned outputs so results
/// do not depend on the thread count.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& body);

} // namespace tptkit
