#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace coda {

// Process-wide worker cap, set once from the CLI --threads flag.
inline std::atomic<int>& max_threads() {
    static std::atomic<int> n{1};
    return n;
}

inline void set_max_threads(int n) {
    if (n <= 0) n = int(std::max(1u, std::thread::hardware_concurrency()));
    max_threads().store(n);
}

// Runs fn(i) for i in [0, count). Each index writes only its own output slot,
// so results are identical for any worker count. The first exception thrown
// by any worker is rethrown on the calling thread.
inline void parallel_for(size_t count, const std::function<void(size_t)>& fn) {
    int workers = std::min<int>(max_threads().load(), int(count));
    if (workers <= 1) {
        for (size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(size_t(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next.store(count);
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace coda
