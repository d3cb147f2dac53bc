#ifndef CLUSTERGNN_PARALLEL_H_
#define CLUSTERGNN_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace clustergnn {

// Process-wide cap on worker threads (default 1).
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks, one per
// thread; callers must write disjoint outputs per index.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace clustergnn

#endif  // CLUSTERGNN_PARALLEL_H_
