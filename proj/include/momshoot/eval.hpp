#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "momshoot/field.hpp"
#include "momshoot/patch.hpp"
#include "momshoot/registration.hpp"

namespace momshoot {

inline constexpr std::array<double, 7> kReportPercentiles{0.3, 5.0, 25.0, 50.0, 75.0, 95.0, 99.7};

// Per node, Euclidean norm of pred(x) - truth(x) in grid units.
ScalarField deformation_error(const DeformationMap &pred, const DeformationMap &truth);

// Linear interpolation between closest ranks: rank = p/100 * (n - 1) in the sorted values.
double percentile(std::span<const double> sorted, double p);

struct ErrorReport {
    std::array<double, 7> percentiles{};
    std::vector<bool> detj_positive;
    double detj_ratio = 0.0;
    std::size_t cases = 0;
    std::size_t nodes = 0;
};

// Percentiles pooled over every node of every error field; det J check per map.
ErrorReport report(const std::vector<ScalarField> &errors, const std::vector<DeformationMap> &maps);

// Header "label,p0.3,p5,p25,p50,p75,p95,p99.7,detj_positive" then one row per labelled report.
void write_report_csv(std::ostream &os, const std::vector<std::pair<std::string, ErrorReport>> &rows);

struct SpeedReport {
    std::size_t patches_fast = 0;
    std::size_t patches_slow = 0;
    std::size_t kept_fast = 0;
    std::size_t kept_slow = 0;
    double count_ratio = 0.0; // kept_fast / patches_slow: processed patches against the dense sweep
    double kept_ratio = 0.0;  // kept_fast / kept_slow
    double seconds_fast = 0.0;
    double seconds_slow = 0.0;
    double time_ratio = 0.0;  // seconds_fast / seconds_slow, 0 when not timed
};

SpeedReport speed_accounting(const PatchSpec &fast, const PatchSpec &slow, const GridGeometry &geometry,
                             std::size_t kept_fast, std::size_t kept_slow, double seconds_fast = 0.0,
                             double seconds_slow = 0.0);

// Iterative mean-template construction: register the atlas to every image, pull each image back
// through the inverse map, average.
ScalarField build_atlas(const std::vector<ScalarField> &images, int rounds, const RegistrationConfig &config);

} // namespace momshoot
