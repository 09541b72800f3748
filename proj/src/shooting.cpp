#include "momshoot/shooting.hpp"

#include <cmath>
#include <string>

#include "momshoot/errors.hpp"
#include "momshoot/parallel.hpp"

namespace momshoot {

const char *to_string(Scheme s) { return s == Scheme::euler ? "euler" : "rk4"; }

Scheme scheme_from_string(const std::string &s) {
    if (s == "euler") return Scheme::euler;
    if (s == "rk4") return Scheme::rk4;
    throw InvalidArgument("unknown integration scheme '" + s + "'");
}

namespace {

using Plane = std::vector<double>;

// All first derivatives d f_i / d x_j of a vector field, indexed [i * rank + j].
std::vector<Plane> jacobian_planes(const VectorField &f) {
    const GridGeometry &g = f.geometry();
    const int rank = g.rank();
    std::vector<Plane> d(rank * rank, Plane(g.node_count()));
    for (int i = 0; i < rank; ++i)
        for (int j = 0; j < rank; ++j) difference(f.component(i), g, j, 1.0, d[i * rank + j]);
    return d;
}

Plane diff(std::span<const double> f, const GridGeometry &g, int axis) {
    Plane out(g.node_count());
    difference(f, g, axis, 1.0, out);
    return out;
}

void check_finite(const VectorField &m, const VectorField &u, double t) {
    for (double x : m.values()) {
        if (!std::isfinite(x)) throw BlowUpError(t, "non-finite momentum");
        if (std::abs(x) > kMomentumBlowUp) throw BlowUpError(t, "momentum magnitude exceeds 1e6");
    }
    for (double x : u.values())
        if (!std::isfinite(x)) throw BlowUpError(t, "non-finite map");
}

struct Pair {
    VectorField m;
    VectorField u;
};

Pair add_scaled(const VectorField &m, const VectorField &u, double h, const GeodesicRhs &k) {
    Pair p{m, u};
    axpy(h, k.dm, p.m);
    axpy(h, k.du, p.u);
    return p;
}

// Reverse-mode product of geodesic_rhs at (m, u) with cotangent (gdm, gdu).
Pair rhs_vjp(const VectorField &m, const VectorField &u, const VectorField &gdm, const VectorField &gdu,
             const KernelPlan &plan) {
    const GridGeometry &g = m.geometry();
    const int rank = g.rank();
    const std::size_t n = g.node_count();
    const VectorField v = apply_K(m, plan);
    const auto Dv = jacobian_planes(v);
    const auto Dm = jacobian_planes(m);
    const auto Du = jacobian_planes(u);

    // dm = -ad*_v m, so the cotangent entering ad* is gad = -gdm.
    VectorField vbar(g), mbar(g), ubar(g);
    Plane gm(n, 0.0);
    for (int i = 0; i < rank; ++i) {
        const auto gi = gdm.component(i);
        const auto mi = m.component(i);
        for (std::size_t x = 0; x < n; ++x) gm[x] -= gi[x] * mi[x];
    }
    Plane div(n, 0.0);
    for (int j = 0; j < rank; ++j)
        for (std::size_t x = 0; x < n; ++x) div[x] += Dv[j * rank + j][x];

    Plane tmp(n);
    for (int j = 0; j < rank; ++j) {
        auto vb = vbar.component(j);
        auto mb = mbar.component(j);
        const auto mj = m.component(j);
        // (Dv)^T m term: d/dv_j = -sum_i D_i(gad_i m_j); d/dm_j = sum_i gad_i D_i v_j
        for (int i = 0; i < rank; ++i) {
            const auto gi = gdm.component(i);
            for (std::size_t x = 0; x < n; ++x) tmp[x] = -gi[x] * mj[x];
            const Plane d = diff(tmp, g, i);
            for (std::size_t x = 0; x < n; ++x) {
                vb[x] -= d[x];
                mb[x] += -gi[x] * Dv[j * rank + i][x];
            }
        }
        // (Dm) v term, d/dv_j = sum_i gad_i D_j m_i
        for (int i = 0; i < rank; ++i) {
            const auto gi = gdm.component(i);
            for (std::size_t x = 0; x < n; ++x) vb[x] += -gi[x] * Dm[i * rank + j][x];
        }
        // (div v) m term, d/dv_j = -D_j(gad . m)
        const Plane dgm = diff(gm, g, j);
        for (std::size_t x = 0; x < n; ++x) vb[x] -= dgm[x];
    }
    for (int i = 0; i < rank; ++i) {
        auto mb = mbar.component(i);
        const auto gi = gdm.component(i);
        // (Dm) v term, d/dm_i = -sum_j D_j(gad_i v_j)
        for (int j = 0; j < rank; ++j) {
            const auto vj = v.component(j);
            for (std::size_t x = 0; x < n; ++x) tmp[x] = -gi[x] * vj[x];
            const Plane d = diff(tmp, g, j);
            for (std::size_t x = 0; x < n; ++x) mb[x] -= d[x];
        }
        // (div v) m term
        for (std::size_t x = 0; x < n; ++x) mb[x] += -gi[x] * div[x];
    }

    // du = -(v + (Du) v)
    for (int j = 0; j < rank; ++j) {
        auto vb = vbar.component(j);
        const auto hj = gdu.component(j);
        for (std::size_t x = 0; x < n; ++x) vb[x] -= hj[x];
        for (int i = 0; i < rank; ++i) {
            const auto hi = gdu.component(i);
            for (std::size_t x = 0; x < n; ++x) vb[x] -= hi[x] * Du[i * rank + j][x];
        }
    }
    for (int i = 0; i < rank; ++i) {
        auto ub = ubar.component(i);
        const auto hi = gdu.component(i);
        for (int j = 0; j < rank; ++j) {
            const auto vj = v.component(j);
            for (std::size_t x = 0; x < n; ++x) tmp[x] = hi[x] * vj[x];
            const Plane d = diff(tmp, g, j);
            for (std::size_t x = 0; x < n; ++x) ub[x] += d[x];
        }
    }

    axpy(1.0, apply_K(vbar, plan), mbar);
    return {std::move(mbar), std::move(ubar)};
}

Pair advance(const VectorField &m, const VectorField &u, const ShootingConfig &config) {
    const double dt = 1.0 / config.steps;
    if (config.scheme == Scheme::euler) {
        const GeodesicRhs k = geodesic_rhs(m, u, config.plan);
        return add_scaled(m, u, dt, k);
    }
    const GeodesicRhs k1 = geodesic_rhs(m, u, config.plan);
    const Pair x2 = add_scaled(m, u, 0.5 * dt, k1);
    const GeodesicRhs k2 = geodesic_rhs(x2.m, x2.u, config.plan);
    const Pair x3 = add_scaled(m, u, 0.5 * dt, k2);
    const GeodesicRhs k3 = geodesic_rhs(x3.m, x3.u, config.plan);
    const Pair x4 = add_scaled(m, u, dt, k3);
    const GeodesicRhs k4 = geodesic_rhs(x4.m, x4.u, config.plan);
    Pair out{m, u};
    const auto accumulate = [dt](std::span<double> y, std::span<const double> a, std::span<const double> b,
                                 std::span<const double> c, std::span<const double> d) {
        for (std::size_t i = 0; i < y.size(); ++i) y[i] += dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]);
    };
    accumulate(out.m.values(), k1.dm.values(), k2.dm.values(), k3.dm.values(), k4.dm.values());
    accumulate(out.u.values(), k1.du.values(), k2.du.values(), k3.du.values(), k4.du.values());
    return out;
}

void validate(const ShootingConfig &config, const GridGeometry &g) {
    if (config.steps < 1) throw InvalidArgument("shooting: steps must be >= 1");
    require_same_geometry(g, config.plan.geometry(), "shooting");
}

} // namespace

VectorField ad_star(const VectorField &v, const VectorField &m) {
    require_same_geometry(v.geometry(), m.geometry(), "ad_star");
    const GridGeometry &g = m.geometry();
    const int rank = g.rank();
    const std::size_t n = g.node_count();
    const auto Dv = jacobian_planes(v);
    const auto Dm = jacobian_planes(m);
    VectorField out(g);
    parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t x) {
        double div = 0.0;
        for (int j = 0; j < rank; ++j) div += Dv[j * rank + j][x];
        for (int i = 0; i < rank; ++i) {
            double s = 0.0;
            for (int j = 0; j < rank; ++j) {
                s += Dv[j * rank + i][x] * m.component(j)[x];
                s += Dm[i * rank + j][x] * v.component(j)[x];
            }
            out.component(i)[x] = s + div * m.component(i)[x];
        }
    });
    return out;
}

GeodesicRhs geodesic_rhs(const VectorField &m, const VectorField &u, const KernelPlan &plan) {
    const GridGeometry &g = m.geometry();
    const int rank = g.rank();
    const std::size_t n = g.node_count();
    const VectorField v = apply_K(m, plan);
    VectorField dm = ad_star(v, m);
    for (double &x : dm.values()) x = -x;
    const auto Du = jacobian_planes(u);
    VectorField du(g);
    parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t x) {
        for (int i = 0; i < rank; ++i) {
            double s = v.component(i)[x];
            for (int j = 0; j < rank; ++j) s += Du[i * rank + j][x] * v.component(j)[x];
            du.component(i)[x] = -s;
        }
    });
    return {std::move(dm), std::move(du)};
}

GeodesicState step(const GeodesicState &state, const ShootingConfig &config) {
    validate(config, state.m.geometry());
    const double dt = 1.0 / config.steps;
    if (state.t + dt > 1.0 + 1e-9) throw InvalidArgument("shooting step would pass t = 1");
    Pair next = advance(state.m, state.phi.displacement(), config);
    const double t = state.t + dt;
    check_finite(next.m, next.u, t);
    return {std::move(next.m), DeformationMap(std::move(next.u)), t};
}

ShootingTrajectory integrate(const VectorField &m0, const ShootingConfig &config) {
    validate(config, m0.geometry());
    ShootingTrajectory traj;
    traj.m.reserve(config.steps + 1);
    traj.u.reserve(config.steps + 1);
    traj.m.push_back(m0);
    traj.u.emplace_back(m0.geometry());
    check_finite(m0, traj.u.back(), 0.0);
    for (int s = 0; s < config.steps; ++s) {
        Pair next = advance(traj.m.back(), traj.u.back(), config);
        check_finite(next.m, next.u, static_cast<double>(s + 1) / config.steps);
        traj.m.push_back(std::move(next.m));
        traj.u.push_back(std::move(next.u));
    }
    return traj;
}

DeformationMap shoot(const VectorField &m0, const ShootingConfig &config) {
    validate(config, m0.geometry());
    GeodesicState state{m0, DeformationMap::identity(m0.geometry()), 0.0};
    check_finite(state.m, state.phi.displacement(), 0.0);
    for (int s = 0; s < config.steps; ++s) {
        Pair next = advance(state.m, state.phi.displacement(), config);
        const double t = static_cast<double>(s + 1) / config.steps;
        check_finite(next.m, next.u, t);
        state = GeodesicState{std::move(next.m), DeformationMap(std::move(next.u)), t};
    }
    return std::move(state.phi);
}

VectorField pullback_to_momentum(const ShootingTrajectory &traj, const VectorField &final_cotangent,
                                 const ShootingConfig &config) {
    const GridGeometry &g = final_cotangent.geometry();
    const double dt = 1.0 / config.steps;
    VectorField mbar(g);
    VectorField ubar = final_cotangent;
    for (int s = config.steps - 1; s >= 0; --s) {
        const VectorField &m = traj.m[s];
        const VectorField &u = traj.u[s];
        if (config.scheme == Scheme::euler) {
            const Pair b = rhs_vjp(m, u, scaled(mbar, dt), scaled(ubar, dt), config.plan);
            axpy(1.0, b.m, mbar);
            axpy(1.0, b.u, ubar);
            continue;
        }
        // Recompute the stage inputs of this step.
        const GeodesicRhs k1 = geodesic_rhs(m, u, config.plan);
        const Pair x2 = add_scaled(m, u, 0.5 * dt, k1);
        const GeodesicRhs k2 = geodesic_rhs(x2.m, x2.u, config.plan);
        const Pair x3 = add_scaled(m, u, 0.5 * dt, k2);
        const GeodesicRhs k3 = geodesic_rhs(x3.m, x3.u, config.plan);
        const Pair x4 = add_scaled(m, u, dt, k3);

        Pair kbar1{scaled(mbar, dt / 6.0), scaled(ubar, dt / 6.0)};
        Pair kbar2{scaled(mbar, dt / 3.0), scaled(ubar, dt / 3.0)};
        Pair kbar3{scaled(mbar, dt / 3.0), scaled(ubar, dt / 3.0)};
        const Pair kbar4{scaled(mbar, dt / 6.0), scaled(ubar, dt / 6.0)};
        Pair xbar{mbar, ubar};

        const Pair b4 = rhs_vjp(x4.m, x4.u, kbar4.m, kbar4.u, config.plan);
        axpy(1.0, b4.m, xbar.m);
        axpy(1.0, b4.u, xbar.u);
        axpy(dt, b4.m, kbar3.m);
        axpy(dt, b4.u, kbar3.u);

        const Pair b3 = rhs_vjp(x3.m, x3.u, kbar3.m, kbar3.u, config.plan);
        axpy(1.0, b3.m, xbar.m);
        axpy(1.0, b3.u, xbar.u);
        axpy(0.5 * dt, b3.m, kbar2.m);
        axpy(0.5 * dt, b3.u, kbar2.u);

        const Pair b2 = rhs_vjp(x2.m, x2.u, kbar2.m, kbar2.u, config.plan);
        axpy(1.0, b2.m, xbar.m);
        axpy(1.0, b2.u, xbar.u);
        axpy(0.5 * dt, b2.m, kbar1.m);
        axpy(0.5 * dt, b2.u, kbar1.u);

        const Pair b1 = rhs_vjp(m, u, kbar1.m, kbar1.u, config.plan);
        axpy(1.0, b1.m, xbar.m);
        axpy(1.0, b1.u, xbar.u);

        mbar = std::move(xbar.m);
        ubar = std::move(xbar.u);
    }
    return mbar;
}

} // namespace momshoot
