#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "momshoot/errors.hpp"
#include "momshoot/shooting.hpp"
#include "test_support.hpp"

using namespace momshoot;
using namespace momshoot::testing;

namespace {

ShootingConfig config_for(const GridGeometry &g, int steps = 10, Scheme s = Scheme::rk4) {
    return ShootingConfig(make_plan(KernelParams::defaults_for_rank(g.rank()), g), steps, s);
}

// Term-by-term assembly of (Dv)^T m + (Dm) v + (div v) m with explicit neighbour lookups.
VectorField ad_star_oracle(const VectorField &v, const VectorField &m) {
    const GridGeometry &g = v.geometry();
    const int r = g.rank();
    VectorField out(g);
    auto d = [&](const VectorField &f, int comp, int axis, std::size_t x) {
        auto up = g.index_of(x), dn = g.index_of(x);
        up[axis] = (up[axis] + 1) % g.dim(axis);
        dn[axis] = (dn[axis] + g.dim(axis) - 1) % g.dim(axis);
        return 0.5 * (f.component(comp)[g.node_of(up)] - f.component(comp)[g.node_of(dn)]);
    };
    for (std::size_t x = 0; x < g.node_count(); ++x) {
        double div = 0.0;
        for (int j = 0; j < r; ++j) div += d(v, j, j, x);
        for (int i = 0; i < r; ++i) {
            double term1 = 0.0, term2 = 0.0;
            for (int j = 0; j < r; ++j) term1 += d(v, j, i, x) * m.component(j)[x];
            for (int j = 0; j < r; ++j) term2 += d(m, i, j, x) * v.component(j)[x];
            out.component(i)[x] = term1 + term2 + div * m.component(i)[x];
        }
    }
    return out;
}

double max_diff(const VectorField &a, const VectorField &b) { return max_abs_diff(a.values(), b.values()); }

} // namespace

TEST_CASE("ad_star") {
    GridGeometry g({8, 8});
    SUBCASE("constant fields give zero") {
        VectorField v(g, 0.3), m(g, -1.2);
        CHECK(max_abs(ad_star(v, m).values()) == 0.0);
    }
    SUBCASE("zero velocity gives zero") {
        CHECK(max_abs(ad_star(VectorField(g), random_vector(g, 1)).values()) == 0.0);
    }
    SUBCASE("random smooth fields match the term-by-term oracle") {
        const VectorField v = smooth_vector(g, 2, 1.0), m = smooth_vector(g, 3, 1.0);
        CHECK(max_diff(ad_star(v, m), ad_star_oracle(v, m)) < 1e-12);
        GridGeometry g3({6, 6, 6});
        const VectorField v3 = random_vector(g3, 4), m3 = random_vector(g3, 5);
        CHECK(max_diff(ad_star(v3, m3), ad_star_oracle(v3, m3)) < 1e-12);
    }
}

TEST_CASE("step") {
    GridGeometry g({16, 16});
    SUBCASE("zero momentum leaves the state unchanged") {
        const ShootingConfig cfg = config_for(g);
        const GeodesicState s0{VectorField(g), DeformationMap::identity(g), 0.0};
        const GeodesicState s1 = step(s0, cfg);
        CHECK(s1.t == doctest::Approx(0.1));
        CHECK(max_abs(s1.m.values()) == 0.0);
        CHECK(max_abs(s1.phi.displacement().values()) == 0.0);
    }
    SUBCASE("one euler step is state + dt * rhs") {
        const ShootingConfig cfg = config_for(g, 4, Scheme::euler);
        const VectorField m = smooth_vector(g, 9, 0.05);
        const VectorField u = smooth_vector(g, 10, 0.5);
        const GeodesicState s1 = step({m, DeformationMap(u), 0.25}, cfg);
        const GeodesicRhs rhs = geodesic_rhs(m, u, cfg.plan);
        for (std::size_t i = 0; i < m.values().size(); ++i) {
            CHECK(s1.m.values()[i] == m.values()[i] + 0.25 * rhs.dm.values()[i]);
            CHECK(s1.phi.displacement().values()[i] == u.values()[i] + 0.25 * rhs.du.values()[i]);
        }
    }
    SUBCASE("stepping past t = 1 is rejected") {
        const ShootingConfig cfg = config_for(g, 4);
        CHECK_THROWS_AS(step({VectorField(g), DeformationMap::identity(g), 1.0}, cfg), InvalidArgument);
    }
}

TEST_CASE("shoot of zero momentum is the exact identity") {
    GridGeometry g({16, 16});
    for (Scheme s : {Scheme::euler, Scheme::rk4}) {
        const DeformationMap phi = shoot(VectorField(g), config_for(g, 10, s));
        for (double v : phi.displacement().values()) CHECK(v == 0.0);
        const ScalarField det = jacobian_determinant(phi);
        for (double v : det.values()) CHECK(v == 1.0);
    }
}

TEST_CASE("constant momentum translates by -alpha/c") {
    for (int rank : {2, 3}) {
        GridGeometry g(std::vector<int>(rank, 8));
        const ShootingConfig cfg = config_for(g);
        const double c = cfg.plan.params().c;
        const double alpha = 0.25 * c;
        VectorField m(g);
        for (double &v : m.component(0)) v = alpha;
        const DeformationMap phi = shoot(m, cfg);
        for (double v : phi.displacement().component(0)) CHECK(std::abs(v - (-alpha / c)) < 1e-6);
        for (int k = 1; k < rank; ++k) CHECK(max_abs(phi.displacement().component(k)) < 1e-12);
    }
}

TEST_CASE("first-step velocity is linear in the momentum") {
    GridGeometry g({16, 16});
    const ShootingConfig cfg = config_for(g);
    const VectorField m = random_vector(g, 3, -0.1, 0.1);
    const VectorField v1 = apply_K(m, cfg.plan);
    const VectorField v2 = apply_K(scaled(m, 2.0), cfg.plan);
    for (std::size_t i = 0; i < v1.values().size(); ++i) CHECK(v2.values()[i] == 2.0 * v1.values()[i]);
}

TEST_CASE("shooting is deterministic") {
    GridGeometry g({16, 16});
    const ShootingConfig cfg = config_for(g);
    const VectorField m = smooth_vector(g, 12, 0.05);
    const DeformationMap a = shoot(m, cfg), b = shoot(m, cfg);
    for (std::size_t i = 0; i < a.displacement().values().size(); ++i)
        CHECK(a.displacement().values()[i] == b.displacement().values()[i]);
}

TEST_CASE("observed temporal convergence order") {
    GridGeometry g({16, 16});
    const VectorField m0 = smooth_vector(g, 42, 0.08);
    for (Scheme s : {Scheme::euler, Scheme::rk4}) {
        const DeformationMap p10 = shoot(m0, config_for(g, 10, s));
        const DeformationMap p20 = shoot(m0, config_for(g, 20, s));
        const DeformationMap p40 = shoot(m0, config_for(g, 40, s));
        const double e1 = max_diff(p10.displacement(), p20.displacement());
        const double e2 = max_diff(p20.displacement(), p40.displacement());
        const double order = std::log2(e1 / e2);
        MESSAGE(std::string(to_string(s)), " observed order ", order);
        if (s == Scheme::rk4) {
            CHECK(order >= 3.5);
        } else {
            // forward Euler is first order globally
            CHECK(order == doctest::Approx(1.0).epsilon(0.1));
        }
    }
}

TEST_CASE("smooth small momentum gives a diffeomorphism") {
    GridGeometry g({32, 32});
    const ShootingConfig cfg = config_for(g);
    VectorField m0 = smooth_vector(g, 7, 1.0);
    m0 = scaled(m0, 0.5 / max_abs(apply_K(m0, cfg.plan).values()));
    CHECK(max_abs(apply_K(m0, cfg.plan).values()) <= 0.5 + 1e-9);
    const DeformationMap phi = shoot(m0, cfg);
    double lo = 1e300;
    const ScalarField det = jacobian_determinant(phi);
    for (double v : det.values()) lo = std::min(lo, v);
    CHECK(lo > 0.0);
}

TEST_CASE("blow-up is reported with its time") {
    GridGeometry g({16, 16});
    const ShootingConfig cfg = config_for(g, 10, Scheme::euler);
    const VectorField m0 = random_vector(g, 1, -5e4, 5e4);
    try {
        shoot(m0, cfg);
        FAIL("expected blow-up");
    } catch (const BlowUpError &e) {
        CHECK(e.time() > 0.0);
        CHECK(e.time() <= 1.0);
    }
}

TEST_CASE("reverse-mode pullback matches finite differences") {
    GridGeometry g({12, 12});
    for (Scheme s : {Scheme::euler, Scheme::rk4}) {
        const ShootingConfig cfg = config_for(g, 5, s);
        const VectorField m0 = smooth_vector(g, 5, 0.05);
        const VectorField w = random_vector(g, 6);
        const VectorField p = random_vector(g, 7, -0.01, 0.01);
        const VectorField mbar = pullback_to_momentum(integrate(m0, cfg), w, cfg);
        const double h = 1e-4;
        VectorField mp = m0, mm = m0;
        axpy(h, p, mp);
        axpy(-h, p, mm);
        const double fd = (dot(w, shoot(mp, cfg).displacement()) - dot(w, shoot(mm, cfg).displacement())) / (2 * h);
        const double an = dot(mbar, p);
        CHECK(std::abs(fd - an) <= 1e-6 * std::abs(an));
    }
}
