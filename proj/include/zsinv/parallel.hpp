// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include "zsinv/error.hpp"

namespace zsinv {

/// Worker cap from ZSINV_THREADS; 1 when unset.
inline std::size_t eval_threads() {
    const char* s = std::getenv("ZSINV_THREADS");
    if (s == nullptr || *s == '\0') return 1;
    char* end = nullptr;
    const long v = std::strtol(s, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError(std::string("ZSINV_THREADS must be a positive integer, got '") + s + "'");
    return std::size_t(v);
}

/// out[i] = fn(i) for i < n. Items are independent, so the result does not
/// depend on the worker count; callers reduce over `out` in index order.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t n, Fn&& fn, std::size_t threads = eval_threads()) {
    std::vector<T> out(n);
    threads = std::max<std::size_t>(1, std::min(threads, n));
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) out[i] = fn(i);
        return out;
    }
    std::vector<std::exception_ptr> errs(threads);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) out[i] = fn(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
    return out;
}

} // namespace zsinv
