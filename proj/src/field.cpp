#include "momshoot/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "momshoot/errors.hpp"
#include "momshoot/parallel.hpp"

namespace momshoot {

const char *to_string(Boundary b) { return b == Boundary::periodic ? "periodic" : "clamp"; }

Boundary boundary_from_string(const char *s) {
    if (std::strcmp(s, "periodic") == 0) return Boundary::periodic;
    if (std::strcmp(s, "clamp") == 0) return Boundary::clamp;
    throw InvalidArgument(std::string("unknown boundary '") + s + "'");
}

GridGeometry::GridGeometry(std::vector<int> dims, Boundary boundary, std::vector<double> spacing)
    : boundary_(boundary) {
    if (dims.size() != 2 && dims.size() != 3) throw InvalidArgument("grid rank must be 2 or 3");
    if (!spacing.empty() && spacing.size() != dims.size())
        throw InvalidArgument("spacing count must match grid rank");
    rank_ = static_cast<int>(dims.size());
    for (int a = 0; a < rank_; ++a) {
        if (dims[a] < 3) throw InvalidArgument("every grid dimension must be >= 3");
        dims_[a] = dims[a];
        if (!spacing.empty()) {
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) throw InvalidArgument("spacing must be > 0");
            spacing_[a] = spacing[a];
        }
    }
    std::size_t s = 1;
    for (int a = rank_ - 1; a >= 0; --a) {
        strides_[a] = s;
        s *= static_cast<std::size_t>(dims_[a]);
    }
    nodes_ = s;
}

std::array<int, 3> GridGeometry::index_of(std::size_t node) const noexcept {
    std::array<int, 3> idx{0, 0, 0};
    for (int a = rank_ - 1; a >= 0; --a) {
        idx[a] = static_cast<int>(node % dims_[a]);
        node /= dims_[a];
    }
    return idx;
}

std::size_t GridGeometry::node_of(const std::array<int, 3> &index) const noexcept {
    std::size_t n = 0;
    for (int a = 0; a < rank_; ++a) n += static_cast<std::size_t>(index[a]) * strides_[a];
    return n;
}

GridGeometry GridGeometry::with_boundary(Boundary b) const {
    GridGeometry g = *this;
    g.boundary_ = b;
    return g;
}

ScalarField::ScalarField(GridGeometry geometry, double fill)
    : geometry_(std::move(geometry)), values_(geometry_.node_count(), fill) {}

ScalarField::ScalarField(GridGeometry geometry, std::vector<double> values)
    : geometry_(std::move(geometry)), values_(std::move(values)) {
    if (values_.size() != geometry_.node_count()) throw InvalidArgument("scalar field value count != node count");
}

bool ScalarField::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

VectorField::VectorField(GridGeometry geometry, double fill)
    : geometry_(std::move(geometry)), values_(geometry_.node_count() * geometry_.rank(), fill) {}

VectorField::VectorField(GridGeometry geometry, std::vector<double> values)
    : geometry_(std::move(geometry)), values_(std::move(values)) {
    if (values_.size() != geometry_.node_count() * geometry_.rank())
        throw InvalidArgument("vector field value count != rank * node count");
}

bool VectorField::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

DeformationMap::DeformationMap(VectorField displacement) : displacement_(std::move(displacement)) {}

DeformationMap DeformationMap::identity(const GridGeometry &geometry) { return DeformationMap(VectorField(geometry)); }

Point DeformationMap::at(std::size_t node) const noexcept {
    const auto idx = geometry().index_of(node);
    Point p{0.0, 0.0, 0.0};
    for (int a = 0; a < geometry().rank(); ++a) p[a] = idx[a] + displacement_.component(a)[node];
    return p;
}

void require_same_geometry(const GridGeometry &a, const GridGeometry &b, const char *what) {
    if (!(a == b)) throw GeometryMismatch(std::string(what) + ": geometry mismatch");
}

double dot(const VectorField &a, const VectorField &b) {
    require_same_geometry(a.geometry(), b.geometry(), "dot");
    double s = 0.0;
    const auto x = a.values();
    const auto y = b.values();
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double max_abs(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

void axpy(double alpha, const VectorField &x, VectorField &y) {
    require_same_geometry(x.geometry(), y.geometry(), "axpy");
    const auto xs = x.values();
    auto ys = y.values();
    for (std::size_t i = 0; i < xs.size(); ++i) ys[i] += alpha * xs[i];
}

VectorField scaled(const VectorField &x, double alpha) {
    VectorField out = x;
    for (double &v : out.values()) v *= alpha;
    return out;
}

void difference(std::span<const double> f, const GridGeometry &g, int axis, double scale, std::span<double> out) {
    const std::int64_t nodes = static_cast<std::int64_t>(g.node_count());
    const std::size_t stride = g.stride(axis);
    const int n = g.dim(axis);
    const bool periodic = g.boundary() == Boundary::periodic;
    const double half = 0.5 * scale;
    parallel_for(0, nodes, [&](std::int64_t node) {
        const int i = static_cast<int>((static_cast<std::size_t>(node) / stride) % n);
        const std::size_t base = static_cast<std::size_t>(node) - static_cast<std::size_t>(i) * stride;
        if (i > 0 && i < n - 1) {
            out[node] = half * (f[node + stride] - f[node - stride]);
        } else if (periodic) {
            const int ip = (i + 1) % n;
            const int im = (i + n - 1) % n;
            out[node] = half * (f[base + ip * stride] - f[base + im * stride]);
        } else if (i == 0) {
            out[node] = scale * (f[node + stride] - f[node]);
        } else {
            out[node] = scale * (f[node] - f[node - stride]);
        }
    });
}

namespace {

// Corner offsets and weights of the multilinear stencil at a point.
struct Stencil {
    int corners = 0;
    std::array<std::size_t, 8> node{};
    std::array<double, 8> weight{};
    // d weight / d point[axis], per corner.
    std::array<std::array<double, 3>, 8> dweight{};
};

Stencil make_stencil(const GridGeometry &g, std::span<const double> p) {
    const int rank = g.rank();
    if (static_cast<int>(p.size()) < rank) throw InvalidArgument("interpolation point has too few coordinates");
    std::array<std::size_t, 3> lo{}, hi{};
    std::array<double, 3> frac{}, dfrac{};
    for (int a = 0; a < rank; ++a) {
        if (!std::isfinite(p[a])) throw InvalidArgument("interpolation point is not finite");
        const int n = g.dim(a);
        if (g.boundary() == Boundary::periodic) {
            const double fl = std::floor(p[a]);
            frac[a] = p[a] - fl;
            dfrac[a] = 1.0;
            const long long i0 = static_cast<long long>(fl);
            lo[a] = static_cast<std::size_t>(((i0 % n) + n) % n);
            hi[a] = (lo[a] + 1) % n;
        } else {
            const double c = std::clamp(p[a], 0.0, static_cast<double>(n - 1));
            dfrac[a] = (p[a] > 0.0 && p[a] < n - 1) ? 1.0 : 0.0;
            long long i0 = static_cast<long long>(std::floor(c));
            if (i0 >= n - 1) i0 = n - 2;
            frac[a] = c - static_cast<double>(i0);
            lo[a] = static_cast<std::size_t>(i0);
            hi[a] = lo[a] + 1;
        }
    }
    Stencil s;
    s.corners = 1 << rank;
    for (int c = 0; c < s.corners; ++c) {
        std::size_t node = 0;
        double w = 1.0;
        for (int a = 0; a < rank; ++a) {
            const bool up = (c >> (rank - 1 - a)) & 1;
            node += (up ? hi[a] : lo[a]) * g.stride(a);
            w *= up ? frac[a] : 1.0 - frac[a];
        }
        s.node[c] = node;
        s.weight[c] = w;
        for (int k = 0; k < rank; ++k) {
            double dw = 1.0;
            for (int a = 0; a < rank; ++a) {
                const bool up = (c >> (rank - 1 - a)) & 1;
                if (a == k)
                    dw *= up ? dfrac[a] : -dfrac[a];
                else
                    dw *= up ? frac[a] : 1.0 - frac[a];
            }
            s.dweight[c][k] = dw;
        }
    }
    return s;
}

double sample(const Stencil &s, std::span<const double> f) {
    double v = 0.0;
    for (int c = 0; c < s.corners; ++c) v += s.weight[c] * f[s.node[c]];
    return v;
}

} // namespace

double interpolate(const ScalarField &field, std::span<const double> point) {
    return sample(make_stencil(field.geometry(), point), field.values());
}

Point interpolate(const VectorField &field, std::span<const double> point) {
    const Stencil s = make_stencil(field.geometry(), point);
    Point out{0.0, 0.0, 0.0};
    for (int k = 0; k < field.components(); ++k) out[k] = sample(s, field.component(k));
    return out;
}

InterpolatedValue interpolate_with_gradient(const ScalarField &field, std::span<const double> point) {
    const Stencil s = make_stencil(field.geometry(), point);
    InterpolatedValue out{0.0, {0.0, 0.0, 0.0}};
    const auto f = field.values();
    for (int c = 0; c < s.corners; ++c) {
        out.value += s.weight[c] * f[s.node[c]];
        for (int k = 0; k < field.geometry().rank(); ++k) out.gradient[k] += s.dweight[c][k] * f[s.node[c]];
    }
    return out;
}

ScalarField warp(const ScalarField &image, const DeformationMap &map) {
    require_same_geometry(image.geometry(), map.geometry(), "warp");
    ScalarField out(image.geometry());
    const std::int64_t nodes = static_cast<std::int64_t>(image.size());
    parallel_for(0, nodes, [&](std::int64_t node) {
        const Point p = map.at(static_cast<std::size_t>(node));
        out[node] = interpolate(image, p);
    });
    return out;
}

VectorField gradient(const ScalarField &field) {
    const GridGeometry &g = field.geometry();
    VectorField out(g);
    for (int a = 0; a < g.rank(); ++a) difference(field.values(), g, a, 1.0 / g.spacing(a), out.component(a));
    return out;
}

ScalarField jacobian_determinant(const DeformationMap &map) {
    const GridGeometry &g = map.geometry();
    const int rank = g.rank();
    const std::size_t n = g.node_count();
    // du[i][j] = d u_i / d x_j
    std::vector<std::vector<double>> du(rank * rank, std::vector<double>(n));
    for (int i = 0; i < rank; ++i)
        for (int j = 0; j < rank; ++j) difference(map.displacement().component(i), g, j, 1.0, du[i * rank + j]);
    ScalarField det(g);
    parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t x) {
        auto J = [&](int i, int j) { return (i == j ? 1.0 : 0.0) + du[i * rank + j][x]; };
        if (rank == 2) {
            det[x] = J(0, 0) * J(1, 1) - J(0, 1) * J(1, 0);
        } else {
            det[x] = J(0, 0) * (J(1, 1) * J(2, 2) - J(1, 2) * J(2, 1)) -
                     J(0, 1) * (J(1, 0) * J(2, 2) - J(1, 2) * J(2, 0)) +
                     J(0, 2) * (J(1, 0) * J(2, 1) - J(1, 1) * J(2, 0));
        }
    });
    return det;
}

DeformationMap invert_map(const DeformationMap &map, int iterations, double tolerance) {
    const GridGeometry &g = map.geometry();
    const int rank = g.rank();
    for (int a = 0; a < rank; ++a) {
        if (max_abs(map.displacement().component(a)) >= 0.5 * g.dim(a))
            throw InvalidArgument("invert_map: displacement exceeds half the domain extent");
    }
    if (iterations < 1 || !(tolerance > 0.0)) throw InvalidArgument("invert_map: iterations >= 1 and tolerance > 0");
    const std::size_t n = g.node_count();
    VectorField y(g);
    double delta = 0.0;
    for (int it = 0; it < iterations; ++it) {
        VectorField next(g);
        parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t x) {
            const auto idx = g.index_of(static_cast<std::size_t>(x));
            Point p{0.0, 0.0, 0.0};
            for (int a = 0; a < rank; ++a) p[a] = idx[a] + y.component(a)[x];
            const Point u = interpolate(map.displacement(), p);
            for (int a = 0; a < rank; ++a) next.component(a)[x] = -u[a];
        });
        delta = 0.0;
        const auto yn = next.values();
        const auto yo = y.values();
        for (std::size_t i = 0; i < yn.size(); ++i) delta = std::max(delta, std::abs(yn[i] - yo[i]));
        y = std::move(next);
        if (delta < tolerance) return DeformationMap(std::move(y));
    }
    throw NonConvergenceError(delta, "invert_map did not converge in " + std::to_string(iterations) + " iterations");
}

DeformationMap compose(const DeformationMap &a, const DeformationMap &b) {
    require_same_geometry(a.geometry(), b.geometry(), "compose");
    const GridGeometry &g = a.geometry();
    const int rank = g.rank();
    VectorField u(g);
    parallel_for(0, static_cast<std::int64_t>(g.node_count()), [&](std::int64_t x) {
        const Point p = b.at(static_cast<std::size_t>(x));
        const Point ua = interpolate(a.displacement(), p);
        for (int k = 0; k < rank; ++k) u.component(k)[x] = b.displacement().component(k)[x] + ua[k];
    });
    return DeformationMap(std::move(u));
}

} // namespace momshoot
