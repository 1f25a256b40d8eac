#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace mrl {

/// Runs fn(job_index) for job_index in [0, n_jobs) on up to n_threads threads.
/// Jobs must be independent; each job writes only to its own output slot, so
/// the numerical result is identical for every thread count.
template <typename Fn>
void parallel_for(std::size_t n_jobs, int n_threads, Fn&& fn) {
    if (n_jobs == 0) return;
    const std::size_t workers =
        std::min<std::size_t>(n_jobs, static_cast<std::size_t>(n_threads < 1 ? 1 : n_threads));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n_jobs; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n_jobs; i += workers) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace mrl
