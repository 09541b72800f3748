#include "momshoot/uncertainty.hpp"

#include <algorithm>

#include <cmath>

#include "momshoot/errors.hpp"
#include "momshoot/parallel.hpp"

namespace momshoot {

void UncertaintyConfig::validate() const {
    if (samples < 1) throw InvalidArgument("uncertainty: samples must be >= 1");
    if (dropout_p && !(*dropout_p >= 0.0 && *dropout_p < 1.0))
        throw InvalidArgument("uncertainty: dropout_p must be in [0,1)");
}

std::vector<VectorField> sample_predictions(const NetworkWeights &weights, const ScalarField &moving,
                                            const ScalarField &target, const PatchSpec &spec, double threshold,
                                            const UncertaintyConfig &config) {
    config.validate();
    const NetworkWeights *w = &weights;
    NetworkWeights overridden;
    if (config.dropout_p) {
        overridden = weights;
        overridden.config.dropout_p = *config.dropout_p;
        w = &overridden;
    }
    std::vector<VectorField> out;
    out.reserve(config.samples);
    for (int k = 0; k < config.samples; ++k)
        out.push_back(predict_image(*w, moving, target, spec, threshold,
                                    DropoutMode::sample(mix_seed(config.rng_seed, static_cast<std::uint64_t>(k))))
                          .m0);
    return out;
}

UncertaintyResult summarize(const std::vector<VectorField> &samples, const ShootingConfig &shooting) {
    if (samples.empty()) throw InvalidArgument("summarize: need at least one sample");
    const GridGeometry &g = samples.front().geometry();
    for (const auto &s : samples) require_same_geometry(s.geometry(), g, "momentum samples");
    const std::size_t n = samples.size();

    // Sums run over offsets from the first sample, so identical samples give an exact mean and zero variance.
    VectorField mean(g);
    for (const auto &s : samples) {
        axpy(1.0, s, mean);
        axpy(-1.0, samples.front(), mean);
    }
    for (double &v : mean.values()) v /= double(n);
    axpy(1.0, samples.front(), mean);

    std::vector<VectorField> disp(n, VectorField(g));
    parallel_for(0, static_cast<std::int64_t>(n), [&](std::int64_t k) {
        disp[k] = shoot(samples[k], shooting).displacement();
    }, 1);

    VectorField variance(g);
    if (n > 1) {
        auto var = variance.values();
        const auto ref = disp.front().values();
        std::vector<double> sum(var.size(), 0.0);
        for (const auto &u : disp) {
            const auto uv = u.values();
            for (std::size_t i = 0; i < var.size(); ++i) {
                const double d = uv[i] - ref[i];
                sum[i] += d;
                var[i] += d * d;
            }
        }
        for (std::size_t i = 0; i < var.size(); ++i)
            var[i] = std::max(0.0, (var[i] - sum[i] * sum[i] / double(n)) / double(n - 1));
    }

    ScalarField unc(g);
    for (std::size_t x = 0; x < g.node_count(); ++x) {
        double s = 0.0;
        for (int k = 0; k < g.rank(); ++k) s += variance.component(k)[x];
        unc[x] = std::sqrt(s);
    }
    DeformationMap mean_phi = shoot(mean, shooting);
    return {std::move(mean), std::move(mean_phi), std::move(variance), std::move(unc), n == 1};
}

} // namespace momshoot
