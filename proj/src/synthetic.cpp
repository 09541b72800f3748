#include "momshoot/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "momshoot/errors.hpp"
#include "momshoot/fluid_kernel.hpp"
#include "momshoot/parallel.hpp"

namespace momshoot {

namespace {

double step_up(double d, double width) { return 0.5 * (1.0 + std::tanh(d / width)); }

struct Blob {
    std::array<double, 3> centre;
    std::array<double, 3> sigma;
    double weight;
};

double blob_value(const Blob &b, const std::array<double, 3> &p, int rank) {
    double q = 0.0;
    for (int a = 0; a < rank; ++a) {
        const double d = (p[a] - b.centre[a]) / b.sigma[a];
        q += d * d;
    }
    return b.weight * std::exp(-0.5 * q);
}

} // namespace

ScalarField brain_template(const GridGeometry &g, std::uint64_t seed) {
    const int rank = g.rank();
    std::array<double, 3> centre{}, axes{};
    double smallest = 1e300;
    for (int a = 0; a < rank; ++a) {
        centre[a] = 0.5 * (g.dim(a) - 1);
        axes[a] = (a == 0 ? 0.30 : 0.24) * g.dim(a);
        smallest = std::min(smallest, axes[a]);
    }
    const double edge = std::max(0.6, 0.012 * smallest * 4.0); // tissue edge width in grid units

    // Interior structure: ventricles straddle the mid-line of the last axis, tissue blobs on a ring.
    std::vector<Blob> blobs;
    std::mt19937_64 rng(mix_seed(seed, 0x51a7));
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    const double j = seed == 0 ? 0.0 : 1.0;
    for (int side : {-1, 1}) {
        Blob v{centre, {}, -0.40};
        v.centre[rank - 1] += side * 0.09 * axes[rank - 1] * 2.0 + j * 0.03 * axes[rank - 1] * jitter(rng);
        v.centre[0] += j * 0.05 * axes[0] * jitter(rng);
        for (int a = 0; a < rank; ++a) v.sigma[a] = (a == 0 ? 0.28 : 0.10) * axes[a];
        blobs.push_back(v);
    }
    constexpr int kTissue = 6;
    for (int k = 0; k < kTissue; ++k) {
        const double angle = 2.0 * std::numbers::pi * (k + 0.5 + 0.25 * j * jitter(rng)) / kTissue;
        Blob t{centre, {}, 0.25 + 0.05 * j * jitter(rng)};
        t.centre[0] += 0.55 * axes[0] * std::sin(angle);
        t.centre[rank - 1] += 0.55 * axes[rank - 1] * std::cos(angle);
        for (int a = 0; a < rank; ++a) t.sigma[a] = 0.16 * axes[a];
        blobs.push_back(t);
    }

    ScalarField f(g);
    parallel_for(0, static_cast<std::int64_t>(g.node_count()), [&](std::int64_t x) {
        const auto idx = g.index_of(static_cast<std::size_t>(x));
        std::array<double, 3> p{};
        double rho2 = 0.0;
        for (int a = 0; a < rank; ++a) {
            p[a] = idx[a];
            const double d = (p[a] - centre[a]) / axes[a];
            rho2 += d * d;
        }
        const double rho = std::sqrt(rho2);
        // Signed distances (grid units, approximate) to the tissue boundary and the skull ring edges.
        const double to_tissue = (1.0 - rho) * smallest;
        const double into_skull = (rho - 1.10) * smallest;
        const double out_of_skull = (1.25 - rho) * smallest;
        double v = 0.55 * step_up(to_tissue, edge);
        double interior = 0.0;
        for (const Blob &b : blobs) interior += blob_value(b, p, rank);
        v += interior * step_up(to_tissue, edge);
        v += 0.9 * std::min(step_up(into_skull, edge), step_up(out_of_skull, edge));
        f[x] = std::max(v, 0.0);
    });
    return f;
}

double background_fraction(const ScalarField &image, double threshold) {
    std::size_t n = 0;
    for (double v : image.values()) n += v < threshold;
    return double(n) / double(image.size());
}

VectorField random_velocity(const GridGeometry &g, std::uint64_t seed, double amplitude, int modes,
                            int max_frequency) {
    if (modes < 1 || max_frequency < 1) throw InvalidArgument("random_velocity: modes and max_frequency must be >= 1");
    if (!(amplitude >= 0.0)) throw InvalidArgument("random_velocity: amplitude must be >= 0");
    std::mt19937_64 rng(mix_seed(seed, 0x7e10));
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> weight(-1.0, 1.0);
    std::uniform_int_distribution<int> freq(0, max_frequency);
    const int rank = g.rank();
    VectorField v(g);
    for (int k = 0; k < rank; ++k) {
        auto comp = v.component(k);
        for (int q = 0; q < modes; ++q) {
            std::array<int, 3> fr{};
            bool nonzero = false;
            for (int a = 0; a < rank; ++a) {
                fr[a] = freq(rng);
                nonzero |= fr[a] != 0;
            }
            if (!nonzero) fr[q % rank] = 1;
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
    const double m = max_abs(v.values());
    if (m > 0.0)
        for (double &e : v.values()) e *= amplitude / m;
    return v;
}

SyntheticPair make_pair(const ScalarField &templ, std::uint64_t seed, const SyntheticConfig &config,
                        const ShootingConfig &shooting) {
    require_same_geometry(templ.geometry(), shooting.plan.geometry(), "synthetic pair");
    const VectorField v =
        random_velocity(templ.geometry(), seed, config.amplitude, config.modes, config.max_frequency);
    VectorField m0 = apply_L(v, shooting.plan);
    DeformationMap phi = shoot(m0, shooting);
    ScalarField target = warp(templ, phi);
    return {templ, std::move(target), std::move(m0), std::move(phi), seed};
}

std::vector<SyntheticPair> make_corpus(const ScalarField &templ, std::size_t count, std::uint64_t seed,
                                       const SyntheticConfig &config, const ShootingConfig &shooting) {
    std::vector<SyntheticPair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_pair(templ, mix_seed(seed, i), config, shooting));
    return out;
}

TwoBlobCase two_blob_case(const GridGeometry &g, double shift) {
    const int rank = g.rank();
    TwoBlobCase c{ScalarField(g), ScalarField(g), {}, {}, 0.0};
    double smallest = 1e300;
    for (int a = 0; a < rank; ++a) smallest = std::min(smallest, double(g.dim(a)));
    c.sigma = 0.07 * smallest;
    for (int a = 0; a < rank; ++a) {
        c.fixed_centre[a] = 0.5 * (g.dim(a) - 1);
        c.moved_centre[a] = 0.5 * (g.dim(a) - 1);
    }
    c.fixed_centre[rank - 1] = 0.30 * g.dim(rank - 1);
    c.moved_centre[rank - 1] = 0.60 * g.dim(rank - 1);
    Blob a{c.fixed_centre, {c.sigma, c.sigma, c.sigma}, 1.0};
    Blob b{c.moved_centre, {c.sigma, c.sigma, c.sigma}, 1.0};
    Blob b_moved = b;
    b_moved.centre[rank - 1] += shift;
    for (std::size_t x = 0; x < g.node_count(); ++x) {
        const auto idx = g.index_of(x);
        std::array<double, 3> p{};
        for (int k = 0; k < rank; ++k) p[k] = idx[k];
        c.moving[x] = blob_value(a, p, rank) + blob_value(b, p, rank);
        c.target[x] = blob_value(a, p, rank) + blob_value(b_moved, p, rank);
    }
    return c;
}

} // namespace momshoot
