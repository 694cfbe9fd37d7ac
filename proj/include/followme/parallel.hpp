#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace followme {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled by
/// exactly one thread, so callers that write per-index slots and reduce them in
/// index order get results independent of `jobs`.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(jobs);
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (std::size_t j = 0; j < jobs; ++j)
        pool.emplace_back([&, j] {
            try {
                for (std::size_t i = j; i < n; i += jobs) fn(i);
            } catch (...) {
                errors[j] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace followme
