#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace fusemerge {

// Worker cap: hardware concurrency, further limited by FUSEMERGE_THREADS.
inline unsigned max_threads() {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("FUSEMERGE_THREADS")) {
        char* end = nullptr;
        const long cap = std::strtol(env, &end, 10);
        if (end == env || cap < 1) return 1;
        if (static_cast<unsigned long>(cap) < n) n = static_cast<unsigned>(cap);
    }
    return n;
}

// Runs fn(i) for i in [0, n). Work items must touch disjoint state, which
// keeps results independent of scheduling.
template <typename F>
void parallel_for(std::size_t n, F&& fn) {
    const unsigned workers = max_threads();
    if (workers <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned used = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (unsigned w = 0; w < used; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += used) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace fusemerge
