#include "momshoot/patch.hpp"

#include <algorithm>
#include <cstdint>
#include <istream>
#include <ostream>

#include "momshoot/errors.hpp"
#include "momshoot/field_io.hpp"
#include "momshoot/parallel.hpp"

namespace momshoot {

PatchSpec PatchSpec::uniform(int rank, int size, int stride, bool flush_edges) {
    PatchSpec s{std::vector<int>(rank, size), std::vector<int>(rank, stride), flush_edges};
    s.validate(rank);
    return s;
}

void PatchSpec::validate(int rank) const {
    if (static_cast<int>(size.size()) != rank || static_cast<int>(stride.size()) != rank)
        throw InvalidArgument("patch spec: size and stride need one entry per axis");
    for (int a = 0; a < rank; ++a) {
        if (size[a] < 1 || size[a] % 2 == 0) throw InvalidArgument("patch spec: size must be odd and positive");
        if (stride[a] < 1 || stride[a] > size[a]) throw InvalidArgument("patch spec: need 1 <= stride <= size");
    }
}

std::size_t PatchSpec::volume() const {
    std::size_t v = 1;
    for (int s : size) v *= static_cast<std::size_t>(s);
    return v;
}

PatchGrid plan_grid(const GridGeometry &geometry, const PatchSpec &spec) {
    const int rank = geometry.rank();
    spec.validate(rank);
    PatchGrid grid{spec, geometry, {}, {}};
    for (int a = 0; a < rank; ++a) {
        const int n = geometry.dim(a), s = spec.size[a], st = spec.stride[a];
        if (s > n) throw InvalidArgument("patch size exceeds image size");
        std::vector<int> o;
        for (int x = 0; x <= n - s; x += st) o.push_back(x);
        if (spec.flush_edges && o.back() != n - s) o.push_back(n - s);
        grid.axis_origins.push_back(std::move(o));
    }
    std::array<std::size_t, 3> counts{1, 1, 1};
    std::size_t total = 1;
    for (int a = 0; a < rank; ++a) total *= counts[a] = grid.axis_origins[a].size();
    grid.origins.reserve(total);
    for (std::size_t i = 0; i < counts[0]; ++i)
        for (std::size_t j = 0; j < counts[1]; ++j)
            for (std::size_t k = 0; k < counts[2]; ++k) {
                std::array<int, 3> o{grid.axis_origins[0][i], grid.axis_origins[1][j], 0};
                if (rank == 3) o[2] = grid.axis_origins[2][k];
                grid.origins.push_back(o);
            }
    return grid;
}

namespace {

// Calls f(local, node) for every node in the window at `origin`, local index last axis fastest.
template <class F>
void for_window(const PatchGrid &grid, const std::array<int, 3> &origin, F &&f) {
    const GridGeometry &g = grid.geometry;
    const int s0 = grid.spec.size[0], s1 = grid.spec.size[1];
    const int s2 = g.rank() == 3 ? grid.spec.size[2] : 1;
    std::size_t local = 0;
    for (int i = 0; i < s0; ++i)
        for (int j = 0; j < s1; ++j) {
            std::size_t node = g.node_of({origin[0] + i, origin[1] + j, origin[2]});
            for (int k = 0; k < s2; ++k) f(local++, node + k);
        }
}

} // namespace

std::span<const double> PatchBatch::input(std::size_t i) const {
    const std::size_t v = grid.patch_volume();
    return std::span<const double>(inputs).subspan(i * 2 * v, 2 * v);
}

std::span<const double> PatchBatch::target(std::size_t i) const {
    if (!has_targets()) throw InvalidArgument("patch batch has no targets");
    const std::size_t v = grid.patch_volume() * rank();
    return std::span<const double>(targets).subspan(i * v, v);
}

PatchBatch extract(const ScalarField &moving, const ScalarField &target, const PatchGrid &grid,
                   const VectorField *momentum) {
    require_same_geometry(moving.geometry(), target.geometry(), "extract images");
    require_same_geometry(grid.geometry, moving.geometry(), "extract grid");
    if (momentum) require_same_geometry(momentum->geometry(), moving.geometry(), "extract momentum");
    const std::size_t n = grid.count(), vol = grid.patch_volume();
    const int rank = grid.geometry.rank();
    PatchBatch b{grid, std::vector<std::size_t>(n), std::vector<double>(n * 2 * vol), {}};
    if (momentum) b.targets.assign(n * rank * vol, 0.0);
    parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t p) {
        b.indices[p] = static_cast<std::size_t>(p);
        double *in = b.inputs.data() + p * 2 * vol;
        double *tg = momentum ? b.targets.data() + p * rank * vol : nullptr;
        for_window(grid, grid.origins[p], [&](std::size_t l, std::size_t node) {
            in[l] = moving[node];
            in[vol + l] = target[node];
            if (tg)
                for (int k = 0; k < rank; ++k) tg[k * vol + l] = momentum->component(k)[node];
        });
    }, 64);
    return b;
}

PatchBatch prune(const PatchBatch &batch, double threshold) {
    if (!(threshold >= 0.0)) throw InvalidArgument("prune threshold must be >= 0");
    PatchBatch out{batch.grid, {}, {}, {}};
    for (std::size_t i = 0; i < batch.count(); ++i) {
        const auto in = batch.input(i);
        const bool background = std::all_of(in.begin(), in.end(), [&](double v) { return v < threshold; });
        if (background) continue;
        out.indices.push_back(batch.indices[i]);
        out.inputs.insert(out.inputs.end(), in.begin(), in.end());
        if (batch.has_targets()) {
            const auto t = batch.target(i);
            out.targets.insert(out.targets.end(), t.begin(), t.end());
        }
    }
    return out;
}

double default_background_threshold(const ScalarField &moving, const ScalarField &target, double fraction) {
    const auto [a0, a1] = std::minmax_element(moving.values().begin(), moving.values().end());
    const auto [b0, b1] = std::minmax_element(target.values().begin(), target.values().end());
    const double range = std::max(*a1, *b1) - std::min(*a0, *b0);
    // A constant pair has no range; a unit intensity scale keeps all-zero pairs prunable.
    return fraction * (range > 0.0 ? range : 1.0);
}

VectorField assemble(std::span<const double> predictions, std::span<const std::size_t> indices,
                     const PatchGrid &grid) {
    const int rank = grid.geometry.rank();
    const std::size_t vol = grid.patch_volume();
    if (predictions.size() != indices.size() * rank * vol)
        throw InvalidArgument("assemble: prediction count does not match patch count");
    VectorField sum(grid.geometry);
    std::vector<int> cover(grid.geometry.node_count(), 0);
    for (const auto &o : grid.origins) for_window(grid, o, [&](std::size_t, std::size_t node) { ++cover[node]; });
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= grid.count()) throw InvalidArgument("assemble: patch index out of range");
        const double *p = predictions.data() + i * rank * vol;
        for_window(grid, grid.origins[indices[i]], [&](std::size_t l, std::size_t node) {
            for (int k = 0; k < rank; ++k) sum.component(k)[node] += p[k * vol + l];
        });
    }
    for (int k = 0; k < rank; ++k) {
        auto c = sum.component(k);
        for (std::size_t x = 0; x < c.size(); ++x)
            if (cover[x] > 0) c[x] /= cover[x];
    }
    return sum;
}

VectorField assemble(std::span<const double> predictions, const PatchGrid &grid) {
    std::vector<std::size_t> all(grid.count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return assemble(predictions, all, grid);
}

void write_batch(std::ostream &os, const PatchBatch &batch) {
    const int rank = batch.rank();
    os << "MOMSHOOT-BATCH v1 count=" << batch.count() << " size=" << join_ints(batch.grid.spec.size)
       << " layers=" << (batch.has_targets() ? 2 + rank : 2) << " dtype=f32 dims=" << join_ints(batch.grid.geometry.dims())
       << " stride=" << join_ints(batch.grid.spec.stride) << " flush=" << (batch.grid.spec.flush_edges ? 1 : 0)
       << " boundary=" << to_string(batch.grid.geometry.boundary()) << '\n';
    for (std::size_t idx : batch.indices) {
        const auto v = static_cast<std::uint32_t>(idx);
        const unsigned char bytes[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
        os.write(reinterpret_cast<const char *>(bytes), 4);
    }
    for (std::size_t i = 0; i < batch.count(); ++i) {
        write_f32(os, batch.input(i));
        if (batch.has_targets()) write_f32(os, batch.target(i));
    }
    if (!os) throw Error("failed writing patch batch");
}

void write_batch(const std::string &path, const PatchBatch &batch) {
    auto os = open_output(path);
    write_batch(os, batch);
}

PatchBatch read_batch(std::istream &is) {
    std::string line;
    if (!std::getline(is, line)) throw InvalidArgument("empty batch file");
    const auto kv = parse_header_tokens(line, "MOMSHOOT-BATCH");
    if (header_value(kv, "dtype") != "f32") throw InvalidArgument("unsupported dtype");
    GridGeometry g(parse_ints(header_value(kv, "dims")), boundary_from_string(header_value(kv, "boundary").c_str()));
    const int rank = g.rank();
    PatchSpec spec{parse_ints(header_value(kv, "size")), parse_ints(header_value(kv, "stride")),
                   header_value(kv, "flush") == "1"};
    PatchGrid grid = plan_grid(g, spec);
    const long long count = std::stoll(header_value(kv, "count"));
    const int layers = parse_ints(header_value(kv, "layers")).at(0);
    if (count < 0) throw InvalidArgument("batch count must be >= 0");
    if (layers != 2 && layers != 2 + rank) throw InvalidArgument("batch layers must be 2 or 2+rank");
    const std::size_t n = static_cast<std::size_t>(count), vol = grid.patch_volume();
    PatchBatch b{grid, std::vector<std::size_t>(n), std::vector<double>(n * 2 * vol), {}};
    if (layers > 2) b.targets.resize(n * rank * vol);
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char bytes[4];
        if (!is.read(reinterpret_cast<char *>(bytes), 4)) throw InvalidArgument("truncated batch file");
        b.indices[i] = std::size_t(bytes[0]) | std::size_t(bytes[1]) << 8 | std::size_t(bytes[2]) << 16 |
                       std::size_t(bytes[3]) << 24;
        if (b.indices[i] >= grid.count()) throw InvalidArgument("batch origin index out of range");
    }
    for (std::size_t i = 0; i < n; ++i) {
        read_f32(is, std::span<double>(b.inputs).subspan(i * 2 * vol, 2 * vol));
        if (layers > 2) read_f32(is, std::span<double>(b.targets).subspan(i * rank * vol, rank * vol));
    }
    return b;
}

PatchBatch read_batch(const std::string &path) {
    auto is = open_input(path);
    return read_batch(is);
}

} // namespace momshoot
