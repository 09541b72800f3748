#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "momshoot/field.hpp"
#include "momshoot/net.hpp"
#include "momshoot/patch.hpp"
#include "momshoot/shooting.hpp"

namespace momshoot {

struct UncertaintyConfig {
    int samples = 50;
    std::uint64_t rng_seed = 0;
    // Overrides the network's dropout rate when set.
    std::optional<double> dropout_p;

    void validate() const;
};

// `samples` sampled-dropout predictions; sample k draws from the stream mix_seed(rng_seed, k).
std::vector<VectorField> sample_predictions(const NetworkWeights &weights, const ScalarField &moving,
                                            const ScalarField &target, const PatchSpec &spec, double threshold,
                                            const UncertaintyConfig &config);

struct UncertaintyResult {
    VectorField mean_m0;
    DeformationMap mean_phi;   // shoot(mean_m0)
    VectorField variance;      // per-direction unbiased variance of the sampled maps
    ScalarField uncertainty;   // sqrt of the summed variances
    bool degenerate = false;   // a single sample: variance is defined as 0
};

UncertaintyResult summarize(const std::vector<VectorField> &samples, const ShootingConfig &shooting);

} // namespace momshoot
