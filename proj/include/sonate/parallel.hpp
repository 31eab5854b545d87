#pragma once

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace sonate {

// Worker cap: SONATE_THREADS if set, otherwise the hardware count.
inline unsigned max_threads() {
    if (const char* env = std::getenv("SONATE_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? hw : 1;
}

// Static-chunked parallel loop. fn(i) must only write to slot i of
// preallocated output, so results are independent of the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const unsigned workers = std::min<std::size_t>(max_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace sonate
