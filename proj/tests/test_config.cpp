#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sstream>

#include "momshoot/config.hpp"
#include "momshoot/errors.hpp"
#include "test_support.hpp"

using namespace momshoot;

namespace {

RunConfig parse(const std::string &text, int rank = 2) {
    RunConfig c = RunConfig::defaults(rank);
    std::istringstream is(text);
    apply_config_text(c, is, "test.toml");
    return c;
}

} // namespace

TEST_CASE("defaults per rank") {
    auto c2 = RunConfig::defaults(2);
    CHECK(c2.kernel.a == 0.05);
    CHECK(c2.kernel.c == 0.005);
    CHECK(c2.train_stride == 1);
    CHECK(c2.predict_stride == 14);
    CHECK(c2.net.encoder_features == std::vector<int>{16, 32});
    CHECK(c2.uncertainty.samples == 50);
    CHECK(c2.sigma == 0.1);
    auto c3 = RunConfig::defaults(3);
    CHECK(c3.kernel.a == 1.5);
    CHECK(c3.kernel.c == 0.15);
    CHECK(c3.train_stride == 7);
    CHECK(c3.net_config().decoders == 3);
    CHECK_NOTHROW(c2.validate());
    CHECK_NOTHROW(c3.validate());
    CHECK_THROWS_AS(RunConfig::defaults(4), InvalidArgument);
}

TEST_CASE("generated text lists every key and round trips") {
    for (int rank : {2, 3}) {
        auto c = RunConfig::defaults(rank);
        const std::string text = to_config_text(c);
        for (const auto &key : config_keys()) {
            const auto dot = key.find('.');
            CHECK(text.find("[" + key.substr(0, dot) + "]") != std::string::npos);
            CHECK(text.find("\n" + key.substr(dot + 1) + " = ") != std::string::npos);
        }
        CHECK(parse(text, rank) == c);
    }
    auto c = RunConfig::defaults(2);
    c.kernel.a = 0.1234567890123;
    c.scheme = Scheme::euler;
    c.net.encoder_features = {8};
    c.precondition = false;
    c.train.rng_seed = 99;
    CHECK(parse(to_config_text(c)) == c);
    CHECK_FALSE(parse(to_config_text(c)) == RunConfig::defaults(2));
}

TEST_CASE("sections, dotted keys, inline tables, comments") {
    auto c = parse(R"(
# run manifest
kernel = { a = 0.2, b = 0.3, c = 0.01 }
shooting.scheme = "euler"   # inline comment
[registration]
sigma = 0.05
max_iters = 7
precondition = false
[net]
encoder_features = [4, 8, 12]
[train]
epochs = 3
)");
    CHECK(c.kernel.a == 0.2);
    CHECK(c.kernel.b == 0.3);
    CHECK(c.kernel.c == 0.01);
    CHECK(c.scheme == Scheme::euler);
    CHECK(c.sigma == 0.05);
    CHECK(c.max_iters == 7);
    CHECK_FALSE(c.precondition);
    CHECK(c.net.encoder_features == std::vector<int>{4, 8, 12});
    CHECK(c.train.epochs == 3);
    CHECK(c.shooting_steps == 10);
}

TEST_CASE("unknown keys and malformed values are rejected with a location") {
    auto expect_error = [](const std::string &text, const std::string &fragment) {
        try {
            parse(text);
            FAIL("no error for: " << text);
        } catch (const InvalidArgument &e) {
            const std::string msg = e.what();
            CHECK_MESSAGE(msg.find(fragment) != std::string::npos, msg);
        }
    };
    expect_error("[kernel]\nd = 1.0\n", "test.toml:2: unknown config key 'kernel.d'");
    expect_error("[colour]\nred = 1\n", "unknown config key 'colour.red'");
    expect_error("[registration]\nsigma = fast\n", "test.toml:2");
    expect_error("[registration]\nmax_iters = 2.5\n", "expected an integer");
    expect_error("[registration]\nprecondition = yes\n", "expected true or false");
    expect_error("[net]\nencoder_features = 16\n", "expected a list");
    expect_error("[kernel\n", "malformed section header");
    expect_error("sigma\n", "expected key = value");
    expect_error("[shooting]\nscheme = \"midpoint\"\n", "test.toml:2");
    expect_error("[train]\nrng_seed = -1\n", "seed must be >= 0");
}

TEST_CASE("set_config_value is the flag override path") {
    auto c = RunConfig::defaults(2);
    set_config_value(c, "registration.sigma", "0.2");
    set_config_value(c, "shooting.scheme", "euler");
    CHECK(get_config_value(c, "registration.sigma") == "0.2");
    CHECK(get_config_value(c, "kernel.c") == "0.005");
    CHECK(get_config_value(c, "train.epochs") == "10");
    CHECK(c.scheme == Scheme::euler);
    CHECK_THROWS_AS(set_config_value(c, "sigma", "0.2"), InvalidArgument);
}

TEST_CASE("derived configs") {
    auto c = RunConfig::defaults(2);
    c.sigma = 0.3;
    c.max_iters = 5;
    c.shooting_steps = 4;
    GridGeometry g({16, 16});
    auto r = c.registration_config(g);
    CHECK(r.sigma == 0.3);
    CHECK(r.max_iters == 5);
    CHECK(r.shooting.steps == 4);
    CHECK(r.shooting.plan.params().a == 0.05);
    CHECK(c.predict_patches().stride == std::vector<int>{14, 14});
    CHECK(c.train_patches().stride == std::vector<int>{1, 1});
    CHECK_THROWS_AS(c.shooting_config(GridGeometry({8, 8, 8})), GeometryMismatch);

    ScalarField a(g), b(g);
    b[0] = 2.0;
    CHECK(c.prune_threshold(a, b) == doctest::Approx(2e-3));
    c.prune = false;
    CHECK(c.prune_threshold(a, b) < -1e300);

    c = RunConfig::defaults(2);
    c.patch_size = 14;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
    c = RunConfig::defaults(2);
    c.uncertainty.samples = 0;
    CHECK_THROWS_AS(c.validate(), InvalidArgument);
}
