#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "momshoot/fluid_kernel.hpp"
#include "momshoot/net.hpp"
#include "momshoot/patch.hpp"
#include "momshoot/registration.hpp"
#include "momshoot/shooting.hpp"
#include "momshoot/uncertainty.hpp"

namespace momshoot {

// Every tunable of a pipeline run. Built as defaults(rank), then a config file, then flag overrides.
struct RunConfig {
    int rank = 2;
    KernelParams kernel;

    int shooting_steps = 10;
    Scheme scheme = Scheme::rk4;

    double sigma = 0.1;
    int max_iters = 200;
    double step_size = 0.01;
    double step_shrink = 0.5;
    double grad_tolerance = 1e-3;
    bool precondition = true;

    int patch_size = 15;
    int train_stride = 1;
    int predict_stride = 14;
    bool flush_edges = true;
    bool prune = true;
    double background_fraction = 1e-3; // pruning threshold as a fraction of the joint intensity range

    NetConfig net;
    TrainConfig train;
    UncertaintyConfig uncertainty;

    static RunConfig defaults(int rank);
    void validate() const;

    ShootingConfig shooting_config(const GridGeometry &geometry) const;
    RegistrationConfig registration_config(const GridGeometry &geometry) const;
    // `net` with patch size and rank taken from the patch section and the image rank.
    NetConfig net_config() const;
    PatchSpec train_patches() const;
    PatchSpec predict_patches() const;
    // Absolute pruning threshold for one image pair; -inf (nothing pruned) when pruning is off.
    double prune_threshold(const ScalarField &moving, const ScalarField &target) const;

    bool operator==(const RunConfig &) const;
};

// Keys as "section.key", in the order init-config writes them.
std::vector<std::string> config_keys();

// Sets one key from its textual value ("0.05", "true", "\"rk4\"", "[16, 32]"). Unknown keys and
// malformed values throw InvalidArgument.
void set_config_value(RunConfig &config, const std::string &dotted_key, const std::string &value);
std::string get_config_value(const RunConfig &config, const std::string &dotted_key);

// TOML subset: [section] headers, key = value lines, dotted keys, inline tables
// (kernel = { a = 0.05, b = 0.05, c = 0.005 }), # comments. Applied on top of `config`.
void apply_config_text(RunConfig &config, std::istream &is, const std::string &source = "config");
void apply_config_file(RunConfig &config, const std::string &path);

// All keys with their current values, sectioned, parseable by apply_config_text.
std::string to_config_text(const RunConfig &config);

} // namespace momshoot
