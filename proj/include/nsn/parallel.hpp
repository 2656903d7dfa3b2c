#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nsn {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Work is claimed dynamically, so callers
/// must write results by index. The first exception thrown is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, unsigned jobs, Fn&& fn) {
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(1u, jobs), n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace nsn
