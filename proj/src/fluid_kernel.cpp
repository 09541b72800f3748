#include "momshoot/fluid_kernel.hpp"

#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "momshoot/errors.hpp"

namespace momshoot {

KernelParams KernelParams::defaults_for_rank(int rank) {
    if (rank == 3) return {1.5, 1.5, 0.15};
    return {0.05, 0.05, 0.005};
}

void KernelParams::validate() const {
    if (!(a >= 0.0) || !(b >= 0.0)) throw InvalidArgument("kernel: a and b must be >= 0");
    if (!(c > 0.0)) throw InvalidArgument("kernel: c must be > 0");
    if (!(a + b > 0.0)) throw InvalidArgument("kernel: a + b must be > 0");
}

namespace detail {

// FFTW's planner is not re-entrant; execution on caller-owned arrays is.
std::mutex &planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftPlans {
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
    std::size_t real_size = 0;
    std::size_t complex_size = 0;

    explicit FftPlans(const GridGeometry &g) {
        std::vector<int> n = g.dims();
        real_size = g.node_count();
        complex_size = real_size / n.back() * (n.back() / 2 + 1);
        std::vector<double> r(real_size);
        std::vector<std::complex<double>> c(complex_size);
        auto *cp = reinterpret_cast<fftw_complex *>(c.data());
        std::lock_guard<std::mutex> lock(planner_mutex());
        const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
        forward = fftw_plan_dft_r2c(g.rank(), n.data(), r.data(), cp, flags);
        backward = fftw_plan_dft_c2r(g.rank(), n.data(), cp, r.data(), flags | FFTW_DESTROY_INPUT);
        if (!forward || !backward) throw Error("FFTW planning failed");
    }
    ~FftPlans() {
        std::lock_guard<std::mutex> lock(planner_mutex());
        fftw_destroy_plan(forward);
        fftw_destroy_plan(backward);
    }
    FftPlans(const FftPlans &) = delete;
    FftPlans &operator=(const FftPlans &) = delete;
};

} // namespace detail

double laplacian_symbol(const GridGeometry &g, const std::array<int, 3> &xi) {
    double lambda = 0.0;
    for (int a = 0; a < g.rank(); ++a) {
        const double h = g.spacing(a);
        lambda += (2.0 - 2.0 * std::cos(2.0 * std::numbers::pi * xi[a] / g.dim(a))) / (h * h);
    }
    return lambda;
}

KernelPlan::KernelPlan(const KernelParams &params, const GridGeometry &geometry)
    : params_(params), geometry_(geometry) {
    params_.validate();
    if (geometry_.boundary() != Boundary::periodic)
        throw InvalidArgument("kernel plan requires a periodic geometry");
    fft_ = std::make_shared<detail::FftPlans>(geometry_);
    multiplier_.resize(fft_->complex_size);
    const int rank = geometry_.rank();
    const int half = geometry_.dim(rank - 1) / 2 + 1;
    for (std::size_t k = 0; k < multiplier_.size(); ++k) {
        std::array<int, 3> xi{0, 0, 0};
        std::size_t rem = k;
        xi[rank - 1] = static_cast<int>(rem % half);
        rem /= half;
        for (int a = rank - 2; a >= 0; --a) {
            xi[a] = static_cast<int>(rem % geometry_.dim(a));
            rem /= geometry_.dim(a);
        }
        const double lambda = laplacian_symbol(geometry_, xi);
        multiplier_[k] = 1.0 / (params_.a * lambda * lambda + params_.b * lambda + params_.c);
    }
}

void KernelPlan::apply_plane(std::span<const double> in, std::span<double> out, bool inverse) const {
    const std::size_t n = fft_->real_size;
    if (in.size() != n || out.size() != n) throw GeometryMismatch("kernel plane size mismatch");
    std::vector<double> work(in.begin(), in.end());
    std::vector<std::complex<double>> spec(fft_->complex_size);
    auto *cp = reinterpret_cast<fftw_complex *>(spec.data());
    fftw_execute_dft_r2c(fft_->forward, work.data(), cp);
    const double norm = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < spec.size(); ++k) {
        const double s = inverse ? 1.0 / multiplier_[k] : multiplier_[k];
        spec[k] *= s * norm;
    }
    fftw_execute_dft_c2r(fft_->backward, cp, out.data());
}

KernelPlan make_plan(const KernelParams &params, const GridGeometry &geometry) {
    return KernelPlan(params, geometry);
}

namespace {
VectorField apply(const VectorField &f, const KernelPlan &plan, bool inverse) {
    require_same_geometry(f.geometry(), plan.geometry(), inverse ? "apply_L" : "apply_K");
    VectorField out(f.geometry());
    for (int k = 0; k < f.components(); ++k) plan.apply_plane(f.component(k), out.component(k), inverse);
    return out;
}
} // namespace

VectorField apply_K(const VectorField &m, const KernelPlan &plan) { return apply(m, plan, false); }
VectorField apply_L(const VectorField &v, const KernelPlan &plan) { return apply(v, plan, true); }

} // namespace momshoot
