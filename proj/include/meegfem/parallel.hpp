#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace meeg
{

/// 0 means one worker per hardware thread.
inline unsigned resolve_workers(unsigned requested, std::size_t tasks)
{
    unsigned w = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
    return static_cast<unsigned>(std::min<std::size_t>(w, std::max<std::size_t>(tasks, 1)));
}

/// Calls f(i) for i in [0, n) on up to `workers` threads. Indices are handed
/// out dynamically; the first exception thrown by any task is rethrown after
/// all workers have stopped.
template <typename F>
void parallel_for(std::size_t n, unsigned workers, F&& f)
{
    workers = resolve_workers(workers, n);
    if (workers <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&]
    {
        for (;;)
        {
            std::size_t i = next.fetch_add(1);
            if (i >= n || failed.load())
                return;
            try
            {
                f(i);
            }
            catch (...)
            {
                std::lock_guard lock(error_mutex);
                if (!error)
                    error = std::current_exception();
                failed = true;
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < workers; ++t)
        pool.emplace_back(run);
    run();
    for (auto& t : pool)
        t.join();
    if (error)
        std::rethrow_exception(error);
}

} // namespace meeg
