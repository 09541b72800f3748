#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "momshoot/errors.hpp"
#include "momshoot/uncertainty.hpp"
#include "test_support.hpp"

using namespace momshoot;
using namespace momshoot::testing;

namespace {

ShootingConfig shooting_for(const GridGeometry &g) {
    return ShootingConfig(make_plan(KernelParams::defaults_for_rank(2), g));
}

NetworkWeights small_net(double dropout) {
    NetConfig c = NetConfig::defaults_for_rank(2);
    c.patch_size = 7;
    c.encoder_features = {3, 4};
    c.dropout_p = dropout;
    return NetworkWeights::initialize(c, 17);
}

} // namespace

TEST_CASE("identical samples have zero variance") {
    GridGeometry g({16, 16});
    auto cfg = shooting_for(g);
    auto m = scaled(smooth_vector(g, 1, 1.0), 1.3e-3);
    std::vector<VectorField> same(7, m);
    auto r = summarize(same, cfg);
    CHECK(max_abs(r.variance.values()) == 0.0);
    CHECK(max_abs(r.uncertainty.values()) == 0.0);
    CHECK(max_abs_diff(r.mean_phi.displacement().values(), shoot(m, cfg).displacement().values()) == 0.0);
    CHECK_FALSE(r.degenerate);
    CHECK(max_abs_diff(r.mean_m0.values(), m.values()) == 0.0);

    auto one = summarize({m}, cfg);
    CHECK(one.degenerate);
    CHECK(max_abs(one.variance.values()) == 0.0);
    CHECK_THROWS_AS(summarize({}, cfg), InvalidArgument);
}

TEST_CASE("variance of two opposite translations") {
    GridGeometry g({16, 16});
    auto cfg = shooting_for(g);
    // Constant momentum alpha shoots to a translation by -alpha / c.
    const double c = KernelParams::defaults_for_rank(2).c, t = 0.5;
    VectorField plus(g), minus(g);
    for (double &v : plus.component(0)) v = t * c;
    for (double &v : minus.component(0)) v = -t * c;
    auto r = summarize({plus, minus}, cfg);
    for (std::size_t x = 0; x < g.node_count(); x += 17) {
        CHECK(r.variance.component(0)[x] == doctest::Approx(2 * t * t).epsilon(1e-10));
        CHECK(std::abs(r.variance.component(1)[x]) < 1e-20);
        CHECK(r.uncertainty[x] == doctest::Approx(std::sqrt(2.0) * t).epsilon(1e-10));
    }
    CHECK(max_abs(r.mean_m0.values()) == 0.0);
    CHECK(max_abs(r.mean_phi.displacement().values()) == 0.0);
}

TEST_CASE("mean map is the shot of the mean momentum") {
    GridGeometry g({16, 16});
    auto cfg = shooting_for(g);
    auto a = scaled(smooth_vector(g, 3, 1.0), 0.01);
    auto b = scaled(smooth_vector(g, 4, 1.0), -0.01);
    auto r = summarize({a, b}, cfg);
    VectorField mean = a;
    axpy(1.0, b, mean);
    for (double &v : mean.values()) v /= 2;
    CHECK(max_abs_diff(r.mean_m0.values(), mean.values()) < 1e-15);
    CHECK(max_abs_diff(r.mean_phi.displacement().values(), shoot(r.mean_m0, cfg).displacement().values()) == 0.0);
    CHECK(max_abs_diff(r.mean_phi.displacement().values(), shoot(mean, cfg).displacement().values()) < 1e-12);
    VectorField avg_maps = shoot(a, cfg).displacement();
    axpy(1.0, shoot(b, cfg).displacement(), avg_maps);
    for (double &v : avg_maps.values()) v /= 2;
    CHECK(max_abs_diff(avg_maps.values(), r.mean_phi.displacement().values()) > 1e-6);
}

TEST_CASE("variance does not depend on sample order and vanishes only where maps agree") {
    GridGeometry g({16, 16});
    auto cfg = shooting_for(g);
    std::vector<VectorField> s;
    for (std::uint64_t k = 0; k < 5; ++k) s.push_back(scaled(smooth_vector(g, 10 + k, 1.0), 0.005));
    auto r1 = summarize(s, cfg);
    std::reverse(s.begin(), s.end());
    std::swap(s[1], s[3]);
    auto r2 = summarize(s, cfg);
    CHECK(max_abs_diff(r1.variance.values(), r2.variance.values()) < 1e-12);
    CHECK(*std::min_element(r1.variance.values().begin(), r1.variance.values().end()) >= 0.0);
    CHECK(*std::min_element(r1.uncertainty.values().begin(), r1.uncertainty.values().end()) > 0.0);
}

TEST_CASE("sample_predictions") {
    GridGeometry g({21, 21});
    auto a = random_scalar(g, 1, 0, 1), b = random_scalar(g, 2, 0, 1);
    auto spec = PatchSpec::uniform(2, 7, 7);
    UncertaintyConfig uc;
    uc.samples = 4;
    uc.rng_seed = 3;

    auto w = small_net(0.3);
    auto s1 = sample_predictions(w, a, b, spec, 0.0, uc);
    auto s2 = sample_predictions(w, a, b, spec, 0.0, uc);
    REQUIRE(s1.size() == 4);
    for (int k = 0; k < 4; ++k) CHECK(max_abs_diff(s1[k].values(), s2[k].values()) == 0.0);
    CHECK(max_abs_diff(s1[0].values(), s1[1].values()) > 0.0);

    uc.dropout_p = 0.0;
    auto flat = sample_predictions(w, a, b, spec, 0.0, uc);
    for (int k = 1; k < 4; ++k) CHECK(max_abs_diff(flat[0].values(), flat[k].values()) == 0.0);
    auto r = summarize(flat, shooting_for(g));
    CHECK(max_abs(r.variance.values()) == 0.0);

    uc.samples = 0;
    CHECK_THROWS_AS(sample_predictions(w, a, b, spec, 0.0, uc), InvalidArgument);
}
