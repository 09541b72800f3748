#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "momshoot/field.hpp"

namespace momshoot {

struct PatchSpec {
    std::vector<int> size;   // odd, per axis
    std::vector<int> stride; // 1 <= stride <= size, per axis
    bool flush_edges = true;

    static PatchSpec uniform(int rank, int size = 15, int stride = 14, bool flush_edges = true);
    void validate(int rank) const;
    std::size_t volume() const;
};

struct PatchGrid {
    PatchSpec spec;
    GridGeometry geometry;
    // Per-axis origin lists; the patch list is their product, last axis fastest.
    std::vector<std::vector<int>> axis_origins;
    std::vector<std::array<int, 3>> origins;

    std::size_t count() const noexcept { return origins.size(); }
    std::size_t patch_volume() const { return spec.volume(); }
};

PatchGrid plan_grid(const GridGeometry &geometry, const PatchSpec &spec);

// Patches of one image pair. `indices[i]` is the position in grid.origins of patch i,
// so pruned batches still know where their patches came from.
struct PatchBatch {
    PatchGrid grid;
    std::vector<std::size_t> indices;
    std::vector<double> inputs;  // count x 2 x volume; layer 0 moving, layer 1 target
    std::vector<double> targets; // count x rank x volume, or empty

    std::size_t count() const noexcept { return indices.size(); }
    bool has_targets() const noexcept { return !targets.empty(); }
    int rank() const noexcept { return grid.geometry.rank(); }
    std::span<const double> input(std::size_t i) const;
    std::span<const double> target(std::size_t i) const;
};

PatchBatch extract(const ScalarField &moving, const ScalarField &target, const PatchGrid &grid,
                   const VectorField *momentum = nullptr);

// Drops patches whose two input layers are both strictly below `threshold` everywhere.
PatchBatch prune(const PatchBatch &batch, double threshold);

// `fraction` of the joint intensity range of the pair (of 1.0 when the pair is constant).
double default_background_threshold(const ScalarField &moving, const ScalarField &target, double fraction = 1e-3);

// Overlap-averaged reassembly. `predictions` holds rank x volume values per grid origin.
VectorField assemble(std::span<const double> predictions, const PatchGrid &grid);
// Sparse form: predictions only for `indices`; every other window contributes zeros
// but still counts toward the averaging denominator.
VectorField assemble(std::span<const double> predictions, std::span<const std::size_t> indices,
                     const PatchGrid &grid);

// Batch dump:
//   MOMSHOOT-BATCH v1 count=<n> size=<s..> layers=<2|2+d> dtype=f32 dims=<..> stride=<..> flush=<0|1> boundary=<..>\n
// then n little-endian u32 origin indices, then per patch its layers (inputs then targets) as f32.
void write_batch(std::ostream &os, const PatchBatch &batch);
void write_batch(const std::string &path, const PatchBatch &batch);
PatchBatch read_batch(std::istream &is);
PatchBatch read_batch(const std::string &path);

} // namespace momshoot
