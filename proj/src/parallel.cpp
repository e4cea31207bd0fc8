#include "kfreg/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <limits>
#include <thread>
#include <vector>

#include "kfreg/errors.hpp"

namespace kfreg {

namespace {
std::atomic<int> g_threads{1};
thread_local bool t_inside_parallel = false;
}  // namespace

void set_thread_count(int n) {
    if (n < 1) throw InputError("thread count must be >= 1");
    g_threads.store(n);
}

int thread_count() { return g_threads.load(); }

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const int workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n);
    if (workers <= 1 || t_inside_parallel) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    struct Failure {
        std::size_t index = std::numeric_limits<std::size_t>::max();
        std::exception_ptr error;
    };
    std::vector<Failure> failures(static_cast<std::size_t>(workers));

    auto run_chunk = [&](int w) {
        t_inside_parallel = true;
        const std::size_t begin = n * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
        const std::size_t end = n * (static_cast<std::size_t>(w) + 1) / static_cast<std::size_t>(workers);
        for (std::size_t i = begin; i < end; ++i) {
            try {
                fn(i);
            } catch (...) {
                failures[static_cast<std::size_t>(w)] = {i, std::current_exception()};
                break;
            }
        }
        t_inside_parallel = false;
    };

    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int w = 1; w < workers; ++w) pool.emplace_back(run_chunk, w);
    run_chunk(0);
    for (auto& t : pool) t.join();

    // rethrow from the lowest failing index so error identity is deterministic
    const Failure* first = nullptr;
    for (const auto& f : failures)
        if (f.error && (!first || f.index < first->index)) first = &f;
    if (first) std::rethrow_exception(first->error);
}

}  // namespace kfreg
