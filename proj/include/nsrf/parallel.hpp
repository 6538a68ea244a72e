#pragma once

#include <cstdint>
#include <functional>

namespace nsrf {

// Global worker count for parallel sections (1 = run inline).
void set_num_threads(int n);
int num_threads();

// Runs fn(chunk_index) for chunk_index in [0, n_chunks). Work is carved into
// fixed chunks by the caller, so results that are combined in chunk order are
// bit-identical for every thread count.
void parallel_chunks(int64_t n_chunks, const std::function<void(int64_t)>& fn);

}  // namespace nsrf
