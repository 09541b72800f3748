#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "momshoot/errors.hpp"
#include "momshoot/patch.hpp"
#include "test_support.hpp"

using namespace momshoot;
using namespace momshoot::testing;

namespace {

std::vector<int> arithmetic_origins(int n, int size, int stride, bool flush) {
    std::vector<int> o;
    for (int k = 0; k * stride + size <= n; ++k) o.push_back(k * stride);
    if (flush && (n - size) % stride != 0) o.push_back(n - size);
    return o;
}

ScalarField square_image(const GridGeometry &g, int lo, int hi) {
    ScalarField f(g);
    for (std::size_t x = 0; x < g.node_count(); ++x) {
        const auto i = g.index_of(x);
        bool in = true;
        for (int a = 0; a < g.rank(); ++a) in = in && i[a] >= lo && i[a] <= hi;
        f[x] = in ? 1.0 : 0.0;
    }
    return f;
}

} // namespace

TEST_CASE("plan_grid counts") {
    GridGeometry g({128, 128});
    auto dense = plan_grid(g, PatchSpec::uniform(2, 15, 1));
    CHECK(dense.axis_origins[0].size() == 114);
    CHECK(dense.count() == 12996);

    auto sparse = plan_grid(g, PatchSpec::uniform(2, 15, 14));
    const std::vector<int> expected{0, 14, 28, 42, 56, 70, 84, 98, 112, 113};
    CHECK(sparse.axis_origins[0] == expected);
    CHECK(sparse.axis_origins[1] == expected);
    CHECK(sparse.count() == 100);
    CHECK(double(sparse.count()) / dense.count() < 0.008);

    auto no_flush = plan_grid(g, PatchSpec::uniform(2, 15, 14, false));
    CHECK(no_flush.count() == 81);
    CHECK(no_flush.axis_origins[0].back() == 112);

    // Origins are listed with the last axis fastest.
    CHECK(sparse.origins[1] == std::array<int, 3>{0, 14, 0});
    CHECK(sparse.origins[10] == std::array<int, 3>{14, 0, 0});

    GridGeometry g3({20, 17, 15});
    auto grid3 = plan_grid(g3, PatchSpec::uniform(3, 15, 7));
    CHECK(grid3.axis_origins[0] == std::vector<int>{0, 5});
    CHECK(grid3.axis_origins[1] == std::vector<int>{0, 2});
    CHECK(grid3.axis_origins[2] == std::vector<int>{0});
    CHECK(grid3.count() == 4);
}

TEST_CASE("plan_grid matches the arithmetic rule, covers every node, and is monotone in stride") {
    for (int n : {7, 15, 16, 29, 40, 57}) {
        for (int size : {3, 7, 15}) {
            if (size > n) continue;
            for (bool flush : {true, false}) {
                std::size_t previous = SIZE_MAX;
                for (int stride = 1; stride <= size; ++stride) {
                    CAPTURE(n);
                    CAPTURE(size);
                    CAPTURE(stride);
                    GridGeometry g({n, n + 2});
                    PatchSpec spec{{size, size}, {stride, stride}, flush};
                    auto grid = plan_grid(g, spec);
                    CHECK(grid.axis_origins[0] == arithmetic_origins(n, size, stride, flush));
                    CHECK(grid.axis_origins[1] == arithmetic_origins(n + 2, size, stride, flush));
                    CHECK(grid.count() <= previous);
                    previous = grid.count();
                    for (const auto &o : grid.origins)
                        for (int a = 0; a < 2; ++a) {
                            CHECK(o[a] >= 0);
                            CHECK(o[a] + size <= g.dim(a));
                        }
                    if (flush) {
                        std::vector<int> cover(g.node_count(), 0);
                        for (const auto &o : grid.origins)
                            for (int i = 0; i < size; ++i)
                                for (int j = 0; j < size; ++j) ++cover[g.node_of({o[0] + i, o[1] + j, 0})];
                        CHECK(*std::min_element(cover.begin(), cover.end()) >= 1);
                    }
                }
            }
        }
    }
}

TEST_CASE("plan_grid rejects invalid specs") {
    GridGeometry g({16, 16});
    CHECK_THROWS_AS(plan_grid(g, PatchSpec::uniform(2, 17, 1)), InvalidArgument);
    CHECK_THROWS_AS(PatchSpec::uniform(2, 14, 1), InvalidArgument);
    CHECK_THROWS_AS(PatchSpec::uniform(2, 7, 8), InvalidArgument);
    CHECK_THROWS_AS(PatchSpec::uniform(2, 7, 0), InvalidArgument);
    CHECK_THROWS_AS(plan_grid(g, PatchSpec{{7}, {1}, true}), InvalidArgument);
}

TEST_CASE("extract copies raw windows") {
    GridGeometry g({40, 33});
    auto grid = plan_grid(g, PatchSpec::uniform(2, 15, 7));
    ScalarField flat(g, 0.25), flat2(g, 2.0);
    auto b = extract(flat, flat2, grid);
    CHECK(b.count() == grid.count());
    CHECK_FALSE(b.has_targets());
    for (std::size_t i = 0; i < b.count(); ++i) {
        auto in = b.input(i);
        CHECK(std::all_of(in.begin(), in.begin() + 225, [](double v) { return v == 0.25; }));
        CHECK(std::all_of(in.begin() + 225, in.end(), [](double v) { return v == 2.0; }));
    }

    ScalarField ramp(g);
    for (std::size_t x = 0; x < g.node_count(); ++x) {
        const auto i = g.index_of(x);
        ramp[x] = 1000 * i[0] + i[1];
    }
    b = extract(ramp, flat, grid);
    auto first = b.input(0);
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 15; ++j) CHECK(first[i * 15 + j] == 1000 * i + j);
    // A patch away from the origin.
    const std::size_t p = 5;
    const auto o = grid.origins[p];
    auto win = b.input(p);
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 15; ++j) CHECK(win[i * 15 + j] == 1000 * (o[0] + i) + (o[1] + j));

    auto m = random_vector(g, 3);
    b = extract(ramp, flat, grid, &m);
    REQUIRE(b.has_targets());
    auto t = b.target(p);
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < 15; ++i)
            for (int j = 0; j < 15; ++j)
                CHECK(t[k * 225 + i * 15 + j] == m.component(k)[g.node_of({o[0] + i, o[1] + j, 0})]);

    CHECK_THROWS_AS(extract(ramp, ScalarField(GridGeometry({40, 34})), grid), GeometryMismatch);
}

TEST_CASE("prune") {
    GridGeometry g({128, 128});
    auto grid = plan_grid(g, PatchSpec::uniform(2, 15, 14));

    auto r = random_scalar(g, 1, 0.0, 1.0);
    auto b = extract(r, r, grid);
    CHECK(prune(b, 0.0).count() == b.count());

    ScalarField zero(g);
    CHECK(prune(extract(zero, zero, grid), 1e-12).count() == 0);
    CHECK_THROWS_AS(prune(b, -1.0), InvalidArgument);

    // Centered 31x31 square: nodes 48..78 per axis.
    auto sq = square_image(g, 48, 78);
    auto kept = prune(extract(sq, zero, grid), 0.01);
    int per_axis = 0;
    for (int o : arithmetic_origins(128, 15, 14, true))
        if (o <= 78 && o + 14 >= 48) ++per_axis;
    CHECK(kept.count() == std::size_t(per_axis * per_axis));
    // Either layer is enough to keep a patch.
    CHECK(prune(extract(zero, sq, grid), 0.01).count() == kept.count());
    for (std::size_t i = 0; i < kept.count(); ++i) {
        const auto o = grid.origins[kept.indices[i]];
        CHECK(o[0] <= 78);
        CHECK(o[0] + 14 >= 48);
    }
}

TEST_CASE("prune never drops a patch holding a value at or above the threshold") {
    GridGeometry g({30, 30});
    auto grid = plan_grid(g, PatchSpec::uniform(2, 7, 3));
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        auto a = random_scalar(g, seed, 0.0, 0.5), c = random_scalar(g, seed + 50, 0.0, 0.5);
        auto m = random_vector(g, seed);
        auto b = extract(a, c, grid, &m);
        const double th = 0.47;
        auto kept = prune(b, th);
        std::size_t k = 0;
        for (std::size_t i = 0; i < b.count(); ++i) {
            auto in = b.input(i);
            const bool has = *std::max_element(in.begin(), in.end()) >= th;
            if (has) {
                REQUIRE(k < kept.count());
                CHECK(kept.indices[k] == i);
                CHECK(max_abs_diff(kept.input(k), in) == 0.0);
                CHECK(max_abs_diff(kept.target(k), b.target(i)) == 0.0);
                ++k;
            }
        }
        CHECK(k == kept.count());
    }
}

TEST_CASE("assemble round trip reproduces the field") {
    for (int size : {7, 15}) {
        for (int stride : {1, 7, 14}) {
            if (stride > size) continue;
            CAPTURE(size);
            CAPTURE(stride);
            GridGeometry g({41, 36});
            auto grid = plan_grid(g, PatchSpec::uniform(2, size, stride));
            auto m = random_vector(g, size * 100 + stride);
            ScalarField s(g);
            auto b = extract(s, s, grid, &m);
            auto back = assemble(b.targets, grid);
            CHECK(max_abs_diff(back.values(), m.values()) < 1e-13);
        }
    }
    GridGeometry g3({17, 16, 15});
    auto grid3 = plan_grid(g3, PatchSpec::uniform(3, 7, 4));
    auto m3 = random_vector(g3, 9);
    ScalarField s3(g3);
    auto back3 = assemble(extract(s3, s3, grid3, &m3).targets, grid3);
    CHECK(max_abs_diff(back3.values(), m3.values()) < 1e-13);
}

TEST_CASE("assemble of a single whole-image patch is that patch") {
    GridGeometry g({15, 15});
    auto grid = plan_grid(g, PatchSpec::uniform(2, 15, 14));
    REQUIRE(grid.count() == 1);
    auto pred = random_vector(g, 4);
    auto out = assemble(pred.values(), grid);
    CHECK(max_abs_diff(out.values(), pred.values()) == 0.0);
    CHECK_THROWS_AS(assemble(std::span<const double>(pred.values()).first(10), grid), InvalidArgument);
}

TEST_CASE("assemble averages overlaps like a direct accumulation") {
    GridGeometry g({128, 128});
    auto grid = plan_grid(g, PatchSpec::uniform(2, 15, 14));
    const std::size_t vol = 225;
    std::vector<double> pred(grid.count() * 2 * vol);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-1, 1);
    for (double &v : pred) v = d(rng);

    std::vector<double> sum(2 * 128 * 128, 0.0), count(128 * 128, 0.0);
    for (std::size_t p = 0; p < grid.count(); ++p) {
        const auto o = grid.origins[p];
        for (int k = 0; k < 2; ++k)
            for (int i = 0; i < 15; ++i)
                for (int j = 0; j < 15; ++j) {
                    const int node = (o[0] + i) * 128 + o[1] + j;
                    sum[k * 128 * 128 + node] += pred[p * 2 * vol + k * vol + i * 15 + j];
                    if (k == 0) count[node] += 1;
                }
    }
    // Column 14 lies in the windows starting at 0 and 14; rows 0..13 are covered once along y.
    CHECK(count[5 * 128 + 14] == 2);
    CHECK(count[5 * 128 + 13] == 1);
    CHECK(count[5 * 128 + 120] == 2);
    CHECK(count[14 * 128 + 14] == 4);
    auto out = assemble(pred, grid);
    double worst = 0;
    for (int k = 0; k < 2; ++k)
        for (int x = 0; x < 128 * 128; ++x)
            worst = std::max(worst, std::abs(out.component(k)[x] - sum[k * 128 * 128 + x] / count[x]));
    CHECK(worst < 1e-13);
}

TEST_CASE("sparse assemble treats missing patches as zero but counts them") {
    GridGeometry g({29, 29});
    auto grid = plan_grid(g, PatchSpec::uniform(2, 15, 14));
    REQUIRE(grid.count() == 4);
    const std::size_t vol = 225;
    std::vector<double> one_patch(2 * vol, 1.0);
    std::vector<std::size_t> idx{0};
    auto out = assemble(one_patch, idx, grid);
    // Node (14,14) is covered by all four windows, (0,0) only by patch 0, (20,20) not by patch 0.
    CHECK(out.component(0)[g.node_of({14, 14, 0})] == doctest::Approx(0.25));
    CHECK(out.component(1)[g.node_of({0, 14, 0})] == doctest::Approx(0.5));
    CHECK(out.component(0)[g.node_of({0, 0, 0})] == 1.0);
    CHECK(out.component(0)[g.node_of({20, 20, 0})] == 0.0);

    std::vector<std::size_t> bad{7};
    CHECK_THROWS_AS(assemble(one_patch, bad, grid), InvalidArgument);
}

TEST_CASE("batch file round trip and header") {
    GridGeometry g({30, 31}, Boundary::clamp);
    auto grid = plan_grid(g, PatchSpec::uniform(2, 7, 5));
    auto a = square_image(g, 10, 16);
    auto c = random_scalar(g, 2, 0.0, 0.5);
    auto m = random_vector(g, 3);
    for (bool with_targets : {false, true}) {
        auto b = prune(extract(a, c, grid, with_targets ? &m : nullptr), 0.9);
        REQUIRE(b.count() > 0);
        REQUIRE(b.count() < grid.count());
        std::stringstream ss;
        write_batch(ss, b);
        const std::string bytes = ss.str();
        const std::string header = std::string("MOMSHOOT-BATCH v1 count=") + std::to_string(b.count()) +
                                   " size=7,7 layers=" + (with_targets ? "4" : "2") +
                                   " dtype=f32 dims=30,31 stride=5,5 flush=1 boundary=clamp\n";
        CHECK(bytes.substr(0, header.size()) == header);
        const std::size_t layers = with_targets ? 4 : 2;
        CHECK(bytes.size() == header.size() + 4 * b.count() + 4 * b.count() * layers * 49);

        auto r = read_batch(ss);
        CHECK(r.indices == b.indices);
        CHECK(r.grid.origins == b.grid.origins);
        CHECK(r.grid.geometry == g);
        CHECK(r.has_targets() == with_targets);
        CHECK(max_abs_diff(r.inputs, b.inputs) < 1e-7);
        if (with_targets) CHECK(max_abs_diff(r.targets, b.targets) < 1e-6);
    }

    std::stringstream truncated("MOMSHOOT-BATCH v1 count=3 size=7,7 layers=2 dtype=f32 dims=30,31 stride=5,5 "
                                "flush=1 boundary=clamp\n\x01\x00");
    CHECK_THROWS_AS(read_batch(truncated), InvalidArgument);
    std::stringstream wrong("MOMSHOOT-FIELD v1 dtype=f32 dims=4,4 channels=1 boundary=clamp\n");
    CHECK_THROWS_AS(read_batch(wrong), InvalidArgument);
}

TEST_CASE("default background threshold") {
    GridGeometry g({8, 8});
    ScalarField a(g, 0.0), b(g, 0.0);
    a[3] = 2.0;
    b[5] = -1.0;
    CHECK(default_background_threshold(a, b) == doctest::Approx(3e-3));
    CHECK(default_background_threshold(a, b, 0.1) == doctest::Approx(0.3));

    ScalarField zero(g, 0.0);
    const double t0 = default_background_threshold(zero, zero);
    CHECK(t0 == doctest::Approx(1e-3));
    auto all = prune(extract(zero, zero, plan_grid(g, PatchSpec::uniform(2, 3, 2))), t0);
    CHECK(all.indices.empty());
    ScalarField flat(g, 5.0);
    auto none = extract(flat, flat, plan_grid(g, PatchSpec::uniform(2, 3, 2)));
    CHECK(prune(none, default_background_threshold(flat, flat)).indices.size() == none.indices.size());
}
