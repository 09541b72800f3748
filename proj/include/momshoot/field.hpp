#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace momshoot {

enum class Boundary { periodic, clamp };

const char *to_string(Boundary b);
Boundary boundary_from_string(const char *s);

// Regular 2D or 3D grid. Nodes are ordered with the last axis fastest.
class GridGeometry {
public:
    GridGeometry(std::vector<int> dims, Boundary boundary = Boundary::periodic, std::vector<double> spacing = {});

    int rank() const noexcept { return rank_; }
    int dim(int axis) const noexcept { return dims_[axis]; }
    double spacing(int axis) const noexcept { return spacing_[axis]; }
    Boundary boundary() const noexcept { return boundary_; }
    std::size_t node_count() const noexcept { return nodes_; }
    // Distance in the flat node array between neighbours along `axis`.
    std::size_t stride(int axis) const noexcept { return strides_[axis]; }
    std::vector<int> dims() const { return {dims_.begin(), dims_.begin() + rank_}; }

    // Grid index of a flat node position (unused trailing axes are 0).
    std::array<int, 3> index_of(std::size_t node) const noexcept;
    std::size_t node_of(const std::array<int, 3> &index) const noexcept;

    GridGeometry with_boundary(Boundary b) const;

    bool operator==(const GridGeometry &) const = default;

private:
    int rank_ = 2;
    std::array<int, 3> dims_{1, 1, 1};
    std::array<double, 3> spacing_{1.0, 1.0, 1.0};
    std::array<std::size_t, 3> strides_{0, 0, 0};
    std::size_t nodes_ = 0;
    Boundary boundary_ = Boundary::periodic;
};

using Point = std::array<double, 3>;

class ScalarField {
public:
    explicit ScalarField(GridGeometry geometry, double fill = 0.0);
    ScalarField(GridGeometry geometry, std::vector<double> values);

    const GridGeometry &geometry() const noexcept { return geometry_; }
    std::size_t size() const noexcept { return values_.size(); }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }
    double &operator[](std::size_t i) noexcept { return values_[i]; }

    bool all_finite() const noexcept;

private:
    GridGeometry geometry_;
    std::vector<double> values_;
};

// d components stored channel-major: all of component 0, then component 1, ...
class VectorField {
public:
    explicit VectorField(GridGeometry geometry, double fill = 0.0);
    VectorField(GridGeometry geometry, std::vector<double> values);

    const GridGeometry &geometry() const noexcept { return geometry_; }
    int components() const noexcept { return geometry_.rank(); }
    std::size_t node_count() const noexcept { return geometry_.node_count(); }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    std::span<const double> component(int k) const noexcept {
        return std::span<const double>(values_).subspan(k * node_count(), node_count());
    }
    std::span<double> component(int k) noexcept {
        return std::span<double>(values_).subspan(k * node_count(), node_count());
    }

    bool all_finite() const noexcept;

private:
    GridGeometry geometry_;
    std::vector<double> values_;
};

// map(x) = x + displacement(x), all in grid-index units.
class DeformationMap {
public:
    explicit DeformationMap(VectorField displacement);
    static DeformationMap identity(const GridGeometry &geometry);

    const GridGeometry &geometry() const noexcept { return displacement_.geometry(); }
    const VectorField &displacement() const noexcept { return displacement_; }
    VectorField &displacement() noexcept { return displacement_; }
    Point at(std::size_t node) const noexcept;

private:
    VectorField displacement_;
};

// Linear algebra on flat fields.
double dot(const VectorField &a, const VectorField &b);
double max_abs(std::span<const double> v);
void axpy(double alpha, const VectorField &x, VectorField &y);
VectorField scaled(const VectorField &x, double alpha);
void require_same_geometry(const GridGeometry &a, const GridGeometry &b, const char *what);

// Central difference along one axis in grid-index units, multiplied by `scale`.
// Periodic grids wrap; clamp grids fall back to one-sided differences at the border.
void difference(std::span<const double> f, const GridGeometry &geometry, int axis, double scale, std::span<double> out);

double interpolate(const ScalarField &field, std::span<const double> point);
Point interpolate(const VectorField &field, std::span<const double> point);

// Value and derivative with respect to the sample point (piecewise multilinear derivative).
struct InterpolatedValue {
    double value;
    Point gradient;
};
InterpolatedValue interpolate_with_gradient(const ScalarField &field, std::span<const double> point);

ScalarField warp(const ScalarField &image, const DeformationMap &map);
VectorField gradient(const ScalarField &field);
ScalarField jacobian_determinant(const DeformationMap &map);
DeformationMap invert_map(const DeformationMap &map, int iterations = 200, double tolerance = 1e-6);

// Composition (a o b)(x) = a(b(x)).
DeformationMap compose(const DeformationMap &a, const DeformationMap &b);

} // namespace momshoot
