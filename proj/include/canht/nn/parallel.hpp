#pragma once

#include <cstdint>
#include <functional>

namespace canht::nn {

// Number of worker lanes: CANHT_THREADS if set (>=1), else the hardware
// concurrency. Resolved once per process.
int thread_count();

// Runs body(begin, end) over a static partition of [0, n) into contiguous
// chunks, one per lane. Each index is owned by exactly one lane and every
// output element is written by exactly one fixed owner, so results are
// byte-identical for any lane count. With one lane the body runs inline.
void parallel_for(std::int64_t n,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace canht::nn
