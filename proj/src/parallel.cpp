#include "speede/parallel.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace speede {

void parallel_chunks(std::size_t num_chunks, int num_threads,
                     const std::function<void(std::size_t)>& fn) {
    if (num_chunks == 0) return;
    const std::size_t workers =
        num_threads <= 1 ? 1 : std::min<std::size_t>(static_cast<std::size_t>(num_threads), num_chunks);
    if (workers == 1) {
        for (std::size_t c = 0; c < num_chunks; ++c) fn(c);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1, std::memory_order_relaxed);
            if (c >= num_chunks) return;
            try {
                fn(c);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t i = 0; i < workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

void parallel_ranges(std::size_t n, std::size_t num_chunks, int num_threads,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (num_chunks == 0) num_chunks = 1;
    if (num_chunks > n) num_chunks = n;
    parallel_chunks(num_chunks, num_threads, [&](std::size_t c) {
        const std::size_t begin = n * c / num_chunks;
        const std::size_t end = n * (c + 1) / num_chunks;
        if (begin < end) fn(c, begin, end);
    });
}

}  // namespace speede
