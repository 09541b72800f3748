#pragma once

#include <vector>

#include "momshoot/field.hpp"
#include "momshoot/shooting.hpp"

namespace momshoot {

struct RegistrationConfig {
    double sigma = 0.1;         // image-match weight is 1/sigma^2
    int max_iters = 200;
    double step_size = 0.01;    // initial line-search step
    double step_shrink = 0.5;   // backtracking factor
    double grad_tolerance = 1e-3; // on the max-norm of the gradient
    // Descend along -L*grad (steepest descent in the metric <m, K m>) instead of -grad.
    bool precondition = true;
    ShootingConfig shooting;

    explicit RegistrationConfig(ShootingConfig shooting_) : shooting(std::move(shooting_)) {}
    void validate() const;
};

struct EnergyTerms {
    double total = 0.0;
    double metric = 0.0;
    double image = 0.0;
};

struct TraceRow {
    int iteration;
    double total;
    double metric;
    double image;
    double step;
};

enum class StopReason { gradient_tolerance, max_iterations, line_search_exhausted };
const char *to_string(StopReason r);

struct RegistrationResult {
    VectorField m0;
    DeformationMap phi;
    std::vector<TraceRow> energy_trace;
    bool converged = false;
    StopReason stop_reason = StopReason::max_iterations;
};

EnergyTerms energy(const VectorField &m0, const ScalarField &source, const ScalarField &target,
                   const RegistrationConfig &config);

// Exact gradient of the discretized energy (reverse mode through shooting and warping).
VectorField energy_gradient(const VectorField &m0, const ScalarField &source, const ScalarField &target,
                            const RegistrationConfig &config);

struct EnergyAndGradient {
    EnergyTerms energy;
    VectorField gradient;
};
EnergyAndGradient energy_and_gradient(const VectorField &m0, const ScalarField &source, const ScalarField &target,
                                      const RegistrationConfig &config);

// Gradient descent with backtracking from m0 = 0. Finds m0 with source o phi ~ target.
RegistrationResult register_pair(const ScalarField &source, const ScalarField &target,
                                 const RegistrationConfig &config);

} // namespace momshoot
