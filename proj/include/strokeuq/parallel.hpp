#pragma once

// Deterministic parallel map over an index range. Work is split into
// contiguous chunks, one per worker, and each task writes only to its own
// preassigned slot, so results are independent of the thread count.

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace strokeuq {

template <class F>
void parallel_for(int n, int threads, F&& body) {
    if (n <= 0) return;
    threads = std::clamp(threads, 1, n);
    if (threads == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    const int chunk = (n + threads - 1) / threads;
    for (int w = 0; w < threads; ++w) {
        const int lo = w * chunk;
        const int hi = std::min(n, lo + chunk);
        pool.emplace_back([&, w, lo, hi] {
            try {
                for (int i = lo; i < hi; ++i) body(i);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace strokeuq
