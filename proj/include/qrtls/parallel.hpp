// parallel.hpp: bounded-worker parallel map with deterministic output order

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <type_traits>
#include <vector>

namespace qrtls {

// Worker count from QRTLS_WORKERS, else hardware concurrency (at least 1).
int default_worker_count();

// Calls f(i) for i in [0, n) on up to `workers` threads; result i lands in slot i.
// The first exception (lowest index) is rethrown after all workers finish.
// on_done(i) runs after each item completes, serialized under a mutex.
template <class F>
auto parallel_map(std::size_t n, int workers, F&& f,
                  const std::function<void(std::size_t)>& on_done = {})
    -> std::vector<std::invoke_result_t<F&, std::size_t>> {
    using R = std::invoke_result_t<F&, std::size_t>;
    std::vector<R> out(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::mutex done_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                out[i] = f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
            if (on_done) {
                std::lock_guard lock(done_mutex);
                on_done(i);
            }
        }
    };

    const std::size_t nthreads =
        std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (nthreads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(nthreads);
        for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return out;
}

}  // namespace qrtls
