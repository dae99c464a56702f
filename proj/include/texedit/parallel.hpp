#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace texedit {

inline unsigned worker_count() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1u : hw;
}

/// Runs body(i) for i in [begin, end) over contiguous static chunks.
/// Each index is visited exactly once; bodies must only write to their own outputs.
template <typename Body>
void parallel_for(std::size_t begin, std::size_t end, Body&& body) {
    if (end <= begin) return;
    const std::size_t n = end - begin;
    const std::size_t workers = std::min<std::size_t>(worker_count(), n);
    if (workers <= 1 || n < 64) {
        for (std::size_t i = begin; i < end; ++i) body(i);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = begin + w * chunk;
        const std::size_t hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        threads.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
}

/// Chunked variant: body(chunk_index, lo, hi). Chunk boundaries depend only on n and
/// chunk count, so per-chunk partial results can be reduced in a fixed order.
template <typename Body>
void parallel_chunks(std::size_t n, std::size_t chunks, Body&& body) {
    if (n == 0 || chunks == 0) return;
    const std::size_t size = (n + chunks - 1) / chunks;
    std::vector<std::jthread> threads;
    for (std::size_t c = 0; c < chunks; ++c) {
        const std::size_t lo = c * size;
        const std::size_t hi = std::min(n, lo + size);
        if (lo >= hi) break;
        if (chunks == 1) {
            body(c, lo, hi);
            return;
        }
        threads.emplace_back([c, lo, hi, &body] { body(c, lo, hi); });
    }
}

}  // namespace texedit
