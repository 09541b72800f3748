#pragma once

#include <cmath>
#include <numbers>
#include <random>

#include "momshoot/field.hpp"

namespace momshoot::testing {

inline ScalarField random_scalar(const GridGeometry &g, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    ScalarField f(g);
    for (double &v : f.values()) v = dist(rng);
    return f;
}

inline VectorField random_vector(const GridGeometry &g, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    VectorField f(g);
    for (double &v : f.values()) v = dist(rng);
    return f;
}

// Sum of a few low-frequency periodic modes with random phases, scaled to max amplitude `amp`.
inline VectorField smooth_vector(const GridGeometry &g, std::uint64_t seed, double amp, int modes = 3) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> weight(-1.0, 1.0);
    std::uniform_int_distribution<int> freq(0, 2);
    VectorField f(g);
    const int rank = g.rank();
    for (int k = 0; k < rank; ++k) {
        auto comp = f.component(k);
        for (int q = 0; q < modes; ++q) {
            std::array<int, 3> fr{freq(rng), freq(rng), freq(rng)};
            if (fr[0] == 0 && fr[1] == 0) fr[0] = 1;
            const double ph = phase(rng);
            const double w = weight(rng);
            for (std::size_t x = 0; x < g.node_count(); ++x) {
                const auto idx = g.index_of(x);
                double arg = ph;
                for (int a = 0; a < rank; ++a) arg += 2.0 * std::numbers::pi * fr[a] * idx[a] / g.dim(a);
                comp[x] += w * std::sin(arg);
            }
        }
    }
    const double m = max_abs(f.values());
    if (m > 0)
        for (double &v : f.values()) v *= amp / m;
    return f;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Isotropic Gaussian blob centred at (cy, cx) on a 2D grid.
inline ScalarField gaussian_blob(const GridGeometry &g, double cy, double cx, double sigma, double peak = 1.0) {
    ScalarField f(g);
    for (std::size_t x = 0; x < g.node_count(); ++x) {
        const auto idx = g.index_of(x);
        const double dy = idx[0] - cy, dx = idx[1] - cx;
        f[x] = peak * std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
    }
    return f;
}

} // namespace momshoot::testing
