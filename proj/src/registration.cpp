#include "momshoot/registration.hpp"

#include <cmath>
#include <limits>

#include "momshoot/errors.hpp"
#include "momshoot/parallel.hpp"

namespace momshoot {

const char *to_string(StopReason r) {
    switch (r) {
    case StopReason::gradient_tolerance: return "gradient_tolerance";
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::line_search_exhausted: return "line_search_exhausted";
    }
    return "unknown";
}

void RegistrationConfig::validate() const {
    if (!(sigma > 0.0)) throw InvalidArgument("registration: sigma must be > 0");
    if (max_iters < 0) throw InvalidArgument("registration: max_iters must be >= 0");
    if (!(step_size > 0.0)) throw InvalidArgument("registration: step_size must be > 0");
    if (!(step_shrink > 0.0 && step_shrink < 1.0)) throw InvalidArgument("registration: step_shrink in (0,1)");
    if (!(grad_tolerance > 0.0)) throw InvalidArgument("registration: grad_tolerance must be > 0");
    if (shooting.steps < 1) throw InvalidArgument("registration: shooting steps must be >= 1");
}

namespace {

void check_inputs(const VectorField &m0, const ScalarField &source, const ScalarField &target,
                  const RegistrationConfig &config) {
    config.validate();
    require_same_geometry(source.geometry(), target.geometry(), "registration images");
    require_same_geometry(m0.geometry(), source.geometry(), "registration momentum");
}

double image_term(const ScalarField &warped, const ScalarField &target, double sigma) {
    double s = 0.0;
    for (std::size_t i = 0; i < warped.size(); ++i) {
        const double r = warped[i] - target[i];
        s += r * r;
    }
    return s / (sigma * sigma);
}

} // namespace

EnergyTerms energy(const VectorField &m0, const ScalarField &source, const ScalarField &target,
                   const RegistrationConfig &config) {
    check_inputs(m0, source, target, config);
    EnergyTerms e;
    e.metric = dot(m0, apply_K(m0, config.shooting.plan));
    e.image = image_term(warp(source, shoot(m0, config.shooting)), target, config.sigma);
    e.total = e.metric + e.image;
    return e;
}

EnergyAndGradient energy_and_gradient(const VectorField &m0, const ScalarField &source, const ScalarField &target,
                                      const RegistrationConfig &config) {
    check_inputs(m0, source, target, config);
    const GridGeometry &g = m0.geometry();
    const int rank = g.rank();
    const std::size_t n = g.node_count();
    const VectorField Km = apply_K(m0, config.shooting.plan);
    const ShootingTrajectory traj = integrate(m0, config.shooting);
    const DeformationMap phi(traj.u.back());

    const double w = 2.0 / (config.sigma * config.sigma);
    VectorField ubar(g);
    std::vector<double> residual(n);
    parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t x) {
        const Point p = phi.at(static_cast<std::size_t>(x));
        const InterpolatedValue iv = interpolate_with_gradient(source, p);
        residual[x] = iv.value - target[x];
        for (int k = 0; k < rank; ++k) ubar.component(k)[x] = w * residual[x] * iv.gradient[k];
    });

    EnergyAndGradient out{{}, pullback_to_momentum(traj, ubar, config.shooting)};
    axpy(2.0, Km, out.gradient);
    out.energy.metric = dot(m0, Km);
    double ssd = 0.0;
    for (double r : residual) ssd += r * r;
    out.energy.image = ssd / (config.sigma * config.sigma);
    out.energy.total = out.energy.metric + out.energy.image;
    return out;
}

VectorField energy_gradient(const VectorField &m0, const ScalarField &source, const ScalarField &target,
                            const RegistrationConfig &config) {
    return energy_and_gradient(m0, source, target, config).gradient;
}

RegistrationResult register_pair(const ScalarField &source, const ScalarField &target,
                                 const RegistrationConfig &config) {
    VectorField m(source.geometry());
    EnergyAndGradient current = energy_and_gradient(m, source, target, config);
    RegistrationResult result{m, DeformationMap::identity(source.geometry()), {}, false, StopReason::max_iterations};
    result.energy_trace.push_back({0, current.energy.total, current.energy.metric, current.energy.image, 0.0});

    constexpr int kMaxHalvings = 20;
    double alpha = config.step_size;
    bool any_accepted = false;
    bool only_blowups = true;
    for (int it = 1; it <= config.max_iters; ++it) {
        if (max_abs(current.gradient.values()) < config.grad_tolerance) {
            result.converged = true;
            result.stop_reason = StopReason::gradient_tolerance;
            break;
        }
        VectorField direction =
            config.precondition ? apply_L(current.gradient, config.shooting.plan) : current.gradient;
        for (double &d : direction.values()) d = -d;

        bool accepted = false;
        VectorField trial(m.geometry());
        for (int h = 0; h <= kMaxHalvings; ++h) {
            trial = m;
            axpy(alpha, direction, trial);
            double e = std::numeric_limits<double>::infinity();
            try {
                e = energy(trial, source, target, config).total;
                only_blowups = false;
            } catch (const NumericalError &) {
            }
            if (e < current.energy.total) {
                accepted = true;
                break;
            }
            alpha *= config.step_shrink;
        }
        if (!accepted) {
            if (!any_accepted && only_blowups)
                throw NumericalError("registration failed: every trial step blew up");
            result.stop_reason = StopReason::line_search_exhausted;
            break;
        }
        any_accepted = true;
        m = std::move(trial);
        current = energy_and_gradient(m, source, target, config);
        result.energy_trace.push_back(
            {it, current.energy.total, current.energy.metric, current.energy.image, alpha});
        alpha /= config.step_shrink;
    }
    if (result.stop_reason == StopReason::max_iterations && !result.converged &&
        max_abs(current.gradient.values()) < config.grad_tolerance) {
        result.converged = true;
        result.stop_reason = StopReason::gradient_tolerance;
    }
    result.phi = shoot(m, config.shooting);
    result.m0 = std::move(m);
    return result;
}

} // namespace momshoot
