#pragma once

#include <cstddef>
#include <functional>

namespace speede {

// Runs fn(chunk) for chunk in [0, num_chunks) on up to num_threads workers.
//
// Results keyed by chunk index and combined in chunk order are independent of
// the thread count, which is how every reduction in this project stays
// bit-deterministic for 1 vs N threads.
void parallel_chunks(std::size_t num_chunks, int num_threads,
                     const std::function<void(std::size_t)>& fn);

// Splits [0, n) into num_chunks contiguous ranges and calls
// fn(chunk, begin, end). Empty ranges are skipped.
void parallel_ranges(std::size_t n, std::size_t num_chunks, int num_threads,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace speede
