#pragma once

// Worker-count selection and a minimal index-parallel loop.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "error.hpp"

namespace w2sg {

/// Worker count from W2SG_THREADS, else the hardware concurrency.
inline unsigned worker_count() {
    if (const char* env = std::getenv("W2SG_THREADS"); env && *env) {
        unsigned long n = 0;
        const auto res = std::from_chars(env, env + std::strlen(env), n);
        if (res.ec != std::errc() || *res.ptr != '\0' || n < 1 || n > 4096)
            throw ConfigError("W2SG_THREADS must be a positive integer, got '" + std::string(env) + "'");
        return static_cast<unsigned>(n);
    }
    return std::max(1U, std::thread::hardware_concurrency());
}

/// Runs jobs 0..count-1 on up to `workers` threads. Results are written by index, so the
/// outcome does not depend on scheduling. The first exception is rethrown after all
/// workers stop.
template <class F>
void parallel_for(std::size_t count, unsigned workers, F&& job) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto loop = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) {
            try {
                job(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next = count;
            }
        }
    };
    const unsigned n = static_cast<unsigned>(std::min<std::size_t>(workers, count));
    if (n <= 1) {
        loop();
    } else {
        std::vector<std::jthread> pool;
        for (unsigned t = 0; t < n; ++t) pool.emplace_back(loop);
    }
    if (error) std::rethrow_exception(error);
}

}  // namespace w2sg
