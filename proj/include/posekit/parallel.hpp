#pragma once

/// \file parallel.hpp
/// \brief Index-parallel loops capped by the POSEKIT_THREADS environment variable.

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace posekit {

/// Worker count: POSEKIT_THREADS when set to a positive integer, else the hardware
/// concurrency (at least 1).
inline std::size_t max_threads()
{
    if (const char* env = std::getenv("POSEKIT_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Calls fn(i) for i in [0, n). Work is split into contiguous chunks; results that are
/// written by index are therefore independent of the thread count. The first exception
/// thrown by any worker is rethrown.
template <typename F>
void parallel_for(std::size_t n, F&& fn, std::size_t threads = max_threads())
{
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t * chunk; i < std::min(n, (t + 1) * chunk); ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace posekit
