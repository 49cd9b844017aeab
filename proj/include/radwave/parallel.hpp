#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace radwave {

/// Runs body(begin, end) over [0, count) split into contiguous chunks of at
/// most `chunk` items, on up to hardware_concurrency() threads. Callers write
/// results by index, so the outcome does not depend on scheduling.
template <class Body>
void parallel_for_chunks(std::size_t count, std::size_t chunk, Body&& body, unsigned max_threads = 0)
{
    if (count == 0)
        return;
    chunk = std::max<std::size_t>(chunk, 1);
    const std::size_t n_chunks = (count + chunk - 1) / chunk;
    unsigned hw = max_threads ? max_threads : std::max(1u, std::thread::hardware_concurrency());
    const auto n_threads = static_cast<unsigned>(std::min<std::size_t>(hw, n_chunks));

    auto run = [&](std::size_t c) {
        const std::size_t b = c * chunk;
        body(b, std::min(count, b + chunk));
    };
    if (n_threads <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c)
            run(c);
        return;
    }

    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (unsigned t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t c = t; c < n_chunks; c += n_threads)
                    run(c);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
            }
        });
    }
    for (auto& th : pool)
        th.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace radwave
