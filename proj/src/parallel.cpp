#include "momshoot/parallel.hpp"

#include <atomic>
#include <thread>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace momshoot {

namespace {
std::atomic<int> configured_threads{0};
}

void set_thread_count(int n) { configured_threads = n > 0 ? n : 0; }

int thread_count() {
    const int n = configured_threads.load();
    if (n > 0) return n;
#if defined(_OPENMP)
    return omp_get_max_threads();
#else
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
#endif
}

} // namespace momshoot
