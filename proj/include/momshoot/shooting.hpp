#pragma once

#include <vector>

#include "momshoot/field.hpp"
#include "momshoot/fluid_kernel.hpp"

namespace momshoot {

enum class Scheme { euler, rk4 };

const char *to_string(Scheme s);
Scheme scheme_from_string(const std::string &s);

struct ShootingConfig {
    int steps = 10;
    Scheme scheme = Scheme::rk4;
    KernelPlan plan;

    ShootingConfig(KernelPlan plan_, int steps_ = 10, Scheme scheme_ = Scheme::rk4)
        : steps(steps_), scheme(scheme_), plan(std::move(plan_)) {}
};

struct GeodesicState {
    VectorField m;
    DeformationMap phi;
    double t = 0.0;
};

// Momentum above this magnitude is treated as a blow-up.
inline constexpr double kMomentumBlowUp = 1e6;

// Coordinate form of the coadjoint action: (Dv)^T m + (Dm) v + (div v) m.
VectorField ad_star(const VectorField &v, const VectorField &m);

// One uniform time step of length 1/config.steps.
GeodesicState step(const GeodesicState &state, const ShootingConfig &config);

// Integrates from the identity at t=0 to t=1 and returns the final map.
DeformationMap shoot(const VectorField &m0, const ShootingConfig &config);

// Time derivative of (m, u) where u is the displacement of the map.
struct GeodesicRhs {
    VectorField dm;
    VectorField du;
};
GeodesicRhs geodesic_rhs(const VectorField &m, const VectorField &u, const KernelPlan &plan);

// States at t = 0, dt, ..., 1, kept for reverse-mode differentiation.
struct ShootingTrajectory {
    std::vector<VectorField> m;
    std::vector<VectorField> u;
};
ShootingTrajectory integrate(const VectorField &m0, const ShootingConfig &config);

// Given dE/du at t=1, returns dE/dm0 of the discretized integration (exact reverse mode).
VectorField pullback_to_momentum(const ShootingTrajectory &trajectory, const VectorField &final_cotangent,
                                 const ShootingConfig &config);

} // namespace momshoot
