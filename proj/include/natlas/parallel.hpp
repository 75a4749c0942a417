// Minimal data-parallel helper; thread count capped by NEWTON_ATLAS_THREADS.
#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace natlas {

inline int thread_budget() {
    if (const char* env = std::getenv("NEWTON_ATLAS_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return std::min(n, 64);
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 16u));
}

// Runs f(begin, end) over a contiguous partition of [0, n); each chunk writes
// to disjoint output slots so the merge is deterministic.
template <class F>
void parallel_chunks(int n, F f) {
    int workers = std::min(thread_budget(), std::max(1, n));
    if (workers <= 1) {
        f(0, n);
        return;
    }
    std::vector<std::thread> pool;
    int chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int lo = w * chunk, hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([=] { f(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace natlas
