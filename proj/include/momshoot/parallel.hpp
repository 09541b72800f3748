#pragma once

#include <cstddef>
#include <cstdint>
#include <exception>
#include <mutex>

namespace momshoot {

// Caps all internal parallelism. n <= 0 restores the default (available cores).
void set_thread_count(int n);
int thread_count();

// Runs body(i) for i in [begin, end) with a static schedule. Each i must write disjoint output.
template <class Body>
void parallel_for(std::int64_t begin, std::int64_t end, Body &&body, std::int64_t min_parallel = 2048) {
    const std::int64_t n = end - begin;
    if (n <= 0) return;
#if defined(_OPENMP)
    if (n >= min_parallel && thread_count() > 1) {
        std::exception_ptr failure;
        std::mutex failure_mutex;
#pragma omp parallel for schedule(static) num_threads(thread_count())
        for (std::int64_t i = begin; i < end; ++i) {
            try {
                body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
        if (failure) std::rethrow_exception(failure);
        return;
    }
#endif
    (void)min_parallel;
    for (std::int64_t i = begin; i < end; ++i) body(i);
}

// Deterministic stream derivation for RNG seeding (splitmix64 finalizer).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace momshoot
