#pragma once

#include <cstddef>
#include <functional>

namespace grail {

/// Process-wide worker cap. Defaults to 1; the CLI sets it from --threads.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous ranges; calls
/// made from inside a worker run serially so nesting never oversubscribes.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace grail
