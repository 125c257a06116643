#pragma once

#include <cstddef>
#include <functional>

namespace fusionforge {

/// Runs body(0) .. body(count - 1) on up to `threads` workers. Jobs write to
/// their own slots, so results do not depend on scheduling. The exception of
/// the lowest failing job index is rethrown.
void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& body);

/// Worker cap from FUSIONFORGE_THREADS, or `fallback` when unset or invalid.
unsigned threads_from_env(unsigned fallback = 1);

}  // namespace fusionforge
