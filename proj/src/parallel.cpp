#include "calypso/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace calypso {

Index thread_count() {
    const char* env = std::getenv("CALYPSO_THREADS");
    Index wanted = 1;
    if (env != nullptr) {
        try {
            const long v = std::stol(env);
            wanted = v > 0 ? static_cast<Index>(v) : 1;
        } catch (const std::exception&) {
            wanted = 1;
        }
    }
    const Index hw = std::max<Index>(1, std::thread::hardware_concurrency());
    return std::min(wanted, hw);
}

void parallel_for(Index n, const std::function<void(Index)>& fn, Index threads) {
    const Index workers = std::min(n, threads == 0 ? thread_count() : threads);
    if (workers <= 1) {
        for (Index i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<Index> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto work = [&] {
        while (!failed.load()) {
            const Index i = next.fetch_add(1);
            if (i >= n) {
                return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) {
                    error = std::current_exception();
                }
                failed.store(true);
            }
        }
    };
    std::vector<std::thread> pool;
    for (Index w = 0; w < workers; ++w) {
        pool.emplace_back(work);
    }
    for (auto& t : pool) {
        t.join();
    }
    if (error) {
        std::rethrow_exception(error);
    }
}

} // namespace calypso
