#include "momshoot/eval.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "momshoot/errors.hpp"
#include "momshoot/parallel.hpp"

namespace momshoot {

ScalarField deformation_error(const DeformationMap &pred, const DeformationMap &truth) {
    require_same_geometry(pred.geometry(), truth.geometry(), "deformation_error");
    const GridGeometry &g = pred.geometry();
    ScalarField e(g);
    for (std::size_t x = 0; x < g.node_count(); ++x) {
        double s = 0.0;
        for (int k = 0; k < g.rank(); ++k) {
            const double d = pred.displacement().component(k)[x] - truth.displacement().component(k)[x];
            s += d * d;
        }
        e[x] = std::sqrt(s);
    }
    return e;
}

double percentile(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw InvalidArgument("percentile of an empty set");
    if (!(p >= 0.0 && p <= 100.0)) throw InvalidArgument("percentile must be in [0,100]");
    const double rank = p / 100.0 * double(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double t = rank - double(lo);
    return sorted[lo] + t * (sorted[hi] - sorted[lo]);
}

ErrorReport report(const std::vector<ScalarField> &errors, const std::vector<DeformationMap> &maps) {
    if (errors.empty()) throw InvalidArgument("report: no cases");
    if (!maps.empty() && maps.size() != errors.size()) throw InvalidArgument("report: one map per error field");
    ErrorReport r;
    r.cases = errors.size();
    std::vector<double> pooled;
    for (const auto &e : errors) pooled.insert(pooled.end(), e.values().begin(), e.values().end());
    r.nodes = pooled.size();
    std::sort(pooled.begin(), pooled.end());
    for (std::size_t i = 0; i < kReportPercentiles.size(); ++i) r.percentiles[i] = percentile(pooled, kReportPercentiles[i]);

    r.detj_positive.assign(maps.size(), false);
    std::vector<char> ok(maps.size(), 0);
    parallel_for(0, static_cast<std::int64_t>(maps.size()), [&](std::int64_t i) {
        const ScalarField det = jacobian_determinant(maps[i]);
        ok[i] = *std::min_element(det.values().begin(), det.values().end()) > 0.0;
    }, 1);
    std::size_t positive = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        r.detj_positive[i] = ok[i] != 0;
        positive += ok[i] != 0;
    }
    r.detj_ratio = maps.empty() ? 0.0 : double(positive) / double(maps.size());
    return r;
}

void write_report_csv(std::ostream &os, const std::vector<std::pair<std::string, ErrorReport>> &rows) {
    os << "label";
    for (double p : kReportPercentiles) os << ",p" << p;
    os << ",detj_positive\n";
    for (const auto &[label, r] : rows) {
        os << label;
        for (double v : r.percentiles) os << ',' << v;
        os << ',' << r.detj_ratio << '\n';
    }
}

SpeedReport speed_accounting(const PatchSpec &fast, const PatchSpec &slow, const GridGeometry &geometry,
                             std::size_t kept_fast, std::size_t kept_slow, double seconds_fast, double seconds_slow) {
    SpeedReport s;
    s.patches_fast = plan_grid(geometry, fast).count();
    s.patches_slow = plan_grid(geometry, slow).count();
    if (kept_fast > s.patches_fast || kept_slow > s.patches_slow)
        throw InvalidArgument("speed_accounting: kept count exceeds the patch count");
    s.kept_fast = kept_fast;
    s.kept_slow = kept_slow;
    s.count_ratio = s.patches_slow ? double(kept_fast) / double(s.patches_slow) : 0.0;
    s.kept_ratio = kept_slow ? double(kept_fast) / double(kept_slow) : 0.0;
    s.seconds_fast = seconds_fast;
    s.seconds_slow = seconds_slow;
    s.time_ratio = seconds_slow > 0.0 ? seconds_fast / seconds_slow : 0.0;
    return s;
}

namespace {

ScalarField mean_of(const std::vector<ScalarField> &images) {
    ScalarField m(images.front().geometry());
    for (const auto &img : images)
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += img[i];
    for (double &v : m.values()) v /= double(images.size());
    return m;
}

} // namespace

ScalarField build_atlas(const std::vector<ScalarField> &images, int rounds, const RegistrationConfig &config) {
    if (images.size() < 2) throw InvalidArgument("build_atlas: need at least two images");
    if (rounds < 0) throw InvalidArgument("build_atlas: rounds must be >= 0");
    for (const auto &img : images) require_same_geometry(img.geometry(), images.front().geometry(), "atlas images");
    ScalarField atlas = mean_of(images);
    for (int round = 0; round < rounds; ++round) {
        std::vector<ScalarField> warped(images.size(), ScalarField(atlas.geometry()));
        for (std::size_t i = 0; i < images.size(); ++i) {
            try {
                const RegistrationResult r = register_pair(atlas, images[i], config);
                warped[i] = warp(images[i], invert_map(r.phi));
            } catch (const NumericalError &e) {
                throw NumericalError("atlas round " + std::to_string(round) + ", image " + std::to_string(i) + ": " +
                                     e.what());
            }
        }
        atlas = mean_of(warped);
    }
    return atlas;
}

} // namespace momshoot
