#ifndef SOFTQUANT_PARALLEL_H_
#define SOFTQUANT_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace softquant {

// Worker count: SOFTQUANT_THREADS when set (0 = auto), otherwise the
// hardware concurrency.
std::size_t WorkerCount();

// Calls fn(i) for i in [0, count). Iterations must be independent; they run
// on up to WorkerCount() threads with no ordering guarantee. The first
// exception thrown by any iteration is rethrown after all workers join.
void ParallelFor(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace softquant

#endif  // SOFTQUANT_PARALLEL_H_
