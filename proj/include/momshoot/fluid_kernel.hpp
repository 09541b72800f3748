#pragma once

#include <memory>
#include <span>
#include <vector>

#include "momshoot/field.hpp"

namespace momshoot {

// Coefficients of L = a*Lap^2 - b*Lap + c, with K = L^-1.
struct KernelParams {
    double a = 0.05;
    double b = 0.05;
    double c = 0.005;

    static KernelParams defaults_for_rank(int rank);
    void validate() const;
};

namespace detail {
struct FftPlans;
}

// Spectral symbol of K cached for one periodic geometry. Immutable and thread-safe to share.
class KernelPlan {
public:
    KernelPlan(const KernelParams &params, const GridGeometry &geometry);

    const KernelParams &params() const noexcept { return params_; }
    const GridGeometry &geometry() const noexcept { return geometry_; }
    // 1/(a*Lambda^2 + b*Lambda + c) on the half spectrum (last axis n/2+1 entries).
    std::span<const double> multiplier() const noexcept { return multiplier_; }
    std::size_t spectrum_size() const noexcept { return multiplier_.size(); }

    // Apply K (or L when inverse) to one scalar plane.
    void apply_plane(std::span<const double> in, std::span<double> out, bool inverse) const;

private:
    KernelParams params_;
    GridGeometry geometry_;
    std::vector<double> multiplier_;
    std::shared_ptr<const detail::FftPlans> fft_;
};

// Negated discrete-Laplacian eigenvalue at frequency index xi.
double laplacian_symbol(const GridGeometry &geometry, const std::array<int, 3> &xi);

KernelPlan make_plan(const KernelParams &params, const GridGeometry &geometry);
VectorField apply_K(const VectorField &m, const KernelPlan &plan);
VectorField apply_L(const VectorField &v, const KernelPlan &plan);

} // namespace momshoot
