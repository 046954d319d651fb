#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace classkit {

// Runs fn(task) for task in [0, tasks) on up to `threads` workers. Tasks are
// claimed in a fixed round-robin assignment, so any per-task output written
// into task-indexed slots is independent of scheduling.
template <typename Fn>
void parallel_for(std::size_t tasks, std::size_t threads, Fn&& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, tasks));
    if (threads == 1) {
        for (std::size_t t = 0; t < tasks; ++t) fn(t);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t t = w; t < tasks; t += threads) fn(t);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

inline std::size_t default_threads() {
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

}  // namespace classkit
