#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace deepdose {

// Worker count used by kernel inner loops. 1 (the default) runs inline.
void set_worker_count(std::size_t workers);
std::size_t worker_count();

// Runs fn(i) for i in [0, n), splitting the range into contiguous blocks.
// Each index is handled by exactly one worker, so results do not depend on
// the worker count as long as fn(i) only writes state owned by i.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    const std::size_t block = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * block;
        const std::size_t end = std::min(n, begin + block);
        if (begin >= end) break;
        pool.emplace_back([&fn, begin, end] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
}

}  // namespace deepdose
