#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace adaps {

/// Runs fn(0..n-1) across at most `jobs` threads. Exceptions are rethrown in
/// the calling thread (first one wins).
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr error;
    std::mutex error_mu;
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(jobs));
    for (int w = 0; w < jobs; ++w) {
        threads.emplace_back([&, w]() {
            for (int i = w; i < n; i += jobs) {
                {
                    std::lock_guard<std::mutex> lk(error_mu);
                    if (error) return;
                }
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lk(error_mu);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace adaps
