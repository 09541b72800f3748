#pragma once

#include <cstdint>
#include <vector>

#include "momshoot/field.hpp"
#include "momshoot/shooting.hpp"

namespace momshoot {

// Brain-like phantom: elliptical head with a bright skull ring, soft tissue blobs and two dark
// ventricles, centred in the grid. `seed` jitters the interior blobs; seed 0 is the canonical template.
ScalarField brain_template(const GridGeometry &geometry, std::uint64_t seed = 0);

// Fraction of nodes whose value lies below `threshold`.
double background_fraction(const ScalarField &image, double threshold);

// Sum of `modes` periodic sinusoids per component with integer frequencies in [0, max_frequency],
// rescaled so the largest component magnitude equals `amplitude` (grid units).
VectorField random_velocity(const GridGeometry &geometry, std::uint64_t seed, double amplitude, int modes = 4,
                            int max_frequency = 2);

struct SyntheticConfig {
    double amplitude = 2.0; // max initial velocity in grid units
    int modes = 4;
    int max_frequency = 2;
};

// moving = template, target = template o phi with phi = shoot(m0), m0 = L v for a random smooth v.
// phi is therefore the exact ground truth of registering moving to target.
struct SyntheticPair {
    ScalarField moving;
    ScalarField target;
    VectorField m0;
    DeformationMap phi;
    std::uint64_t seed;
};

SyntheticPair make_pair(const ScalarField &templ, std::uint64_t seed, const SyntheticConfig &config,
                        const ShootingConfig &shooting);

std::vector<SyntheticPair> make_corpus(const ScalarField &templ, std::size_t count, std::uint64_t seed,
                                       const SyntheticConfig &config, const ShootingConfig &shooting);

// Two identical Gaussian blobs; in the target only the second one moves by `shift` along the last axis.
struct TwoBlobCase {
    ScalarField moving;
    ScalarField target;
    std::array<double, 3> fixed_centre{};
    std::array<double, 3> moved_centre{};
    double sigma = 0.0;
};

TwoBlobCase two_blob_case(const GridGeometry &geometry, double shift);

} // namespace momshoot
