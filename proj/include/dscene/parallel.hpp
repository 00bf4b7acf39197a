#pragma once

#include <cstdint>
#include <functional>

namespace dscene {

/// Number of worker threads to use when the caller asks for "default".
int default_threads();

/// Runs fn(i) for i in [0, n). Work is split into contiguous blocks, one per
/// worker. Results must be written to per-index slots; with that discipline
/// the outcome is identical for any thread count.
void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn);

}  // namespace dscene
