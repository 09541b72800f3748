#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "momshoot/config.hpp"
#include "momshoot/errors.hpp"
#include "momshoot/eval.hpp"
#include "momshoot/field_io.hpp"
#include "momshoot/net.hpp"
#include "momshoot/parallel.hpp"
#include "momshoot/patch.hpp"
#include "momshoot/registration.hpp"
#include "momshoot/synthetic.hpp"
#include "momshoot/uncertainty.hpp"

using namespace momshoot;

namespace {

struct Common {
    std::string config_path;
    std::vector<std::string> sets;
    int threads = 0;
};

void add_common(CLI::App *cmd, Common &c) {
    cmd->add_option("--config", c.config_path, "TOML-style run config")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "Override one config key, e.g. --set registration.sigma=0.05");
    cmd->add_option("--threads", c.threads, "Cap on internal parallelism (default: all cores)")
        ->check(CLI::NonNegativeNumber);
    cmd->parse_complete_callback([&c] { set_thread_count(c.threads); });
}

RunConfig load_config(const Common &c, int rank) {
    RunConfig config = RunConfig::defaults(rank);
    if (!c.config_path.empty()) apply_config_file(config, c.config_path);
    for (const std::string &s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw InvalidArgument("--set expects key=value, got '" + s + "'");
        set_config_value(config, s.substr(0, eq), s.substr(eq + 1));
    }
    return config;
}

bool ends_with(const std::string &s, const std::string &suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ScalarField read_image(const std::string &path) {
    return ends_with(path, ".pgm") ? read_pgm(path) : read_scalar_field(path);
}

std::pair<ScalarField, ScalarField> read_pair(const std::string &moving, const std::string &target) {
    ScalarField m = read_image(moving);
    ScalarField t = read_image(target);
    require_same_geometry(m.geometry(), t.geometry(), "moving and target images");
    return {std::move(m), std::move(t)};
}

double min_det(const DeformationMap &phi) {
    const ScalarField d = jacobian_determinant(phi);
    return *std::min_element(d.values().begin(), d.values().end());
}

void log(const std::string &line) { std::cerr << line << '\n'; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string quote(const std::string &s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"' || ch == '\\') out += '\\';
        out += ch == '\n' ? ' ' : ch;
    }
    return out + "\"";
}

int fail(const std::string &command, int code, const std::string &kind, const std::string &message) {
    std::cerr << "momshoot: error exit=" << code << " kind=" << kind << " command=" << (command.empty() ? "-" : command)
              << " message=" << quote(message) << '\n';
    return code;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Patch-wise prediction of LDDMM initial momenta"};
    app.require_subcommand(1);
    Common common;

    // init-config
    auto *init = app.add_subcommand("init-config", "Write every config key with its default");
    int init_rank = 2;
    std::string init_out;
    init->add_option("--rank", init_rank, "Image rank (2 or 3)")->check(CLI::IsMember({2, 3}));
    init->add_option("-o,--out", init_out, "Output path (default: stdout)");
    init->callback([&] {
        const std::string text = to_config_text(RunConfig::defaults(init_rank));
        if (init_out.empty()) {
            std::cout << text;
        } else {
            auto os = open_output(init_out);
            os << text;
        }
    });

    // register
    auto *reg = app.add_subcommand("register", "Optimize the initial momentum of one image pair");
    std::string reg_moving, reg_target, reg_m0, reg_map, reg_trace;
    reg->add_option("--moving", reg_moving, "Moving (source) image")->required();
    reg->add_option("--target", reg_target, "Target image")->required();
    reg->add_option("--out-m0", reg_m0, "Initial momentum output")->required();
    reg->add_option("--out-map", reg_map, "Deformation map output");
    reg->add_option("--trace", reg_trace, "Energy trace CSV");
    add_common(reg, common);
    reg->callback([&] {
        auto [moving, target] = read_pair(reg_moving, reg_target);
        const RunConfig config = load_config(common, moving.geometry().rank());
        config.validate();
        const RegistrationResult r = register_pair(moving, target, config.registration_config(moving.geometry()));
        write_field(reg_m0, r.m0);
        if (!reg_map.empty()) write_field(reg_map, r.phi);
        if (!reg_trace.empty()) {
            auto os = open_output(reg_trace);
            os.precision(17);
            os << "iter,total,metric,image,step\n";
            for (const TraceRow &row : r.energy_trace)
                os << row.iteration << ',' << row.total << ',' << row.metric << ',' << row.image << ',' << row.step
                   << '\n';
        }
        std::ostringstream msg;
        msg << "register: iterations=" << r.energy_trace.back().iteration << " stop=" << to_string(r.stop_reason)
            << " image_term=" << r.energy_trace.front().image << "->" << r.energy_trace.back().image
            << " min_detJ=" << min_det(r.phi);
        log(msg.str());
    });

    // export-batch
    auto *exp = app.add_subcommand("export-batch", "Cut a registered pair into training patches");
    std::string exp_moving, exp_target, exp_m0, exp_out;
    exp->add_option("--moving", exp_moving, "Moving image")->required();
    exp->add_option("--target", exp_target, "Target image")->required();
    exp->add_option("--m0", exp_m0, "Initial momentum from register")->required();
    exp->add_option("--out", exp_out, "Batch output")->required();
    add_common(exp, common);
    exp->callback([&] {
        auto [moving, target] = read_pair(exp_moving, exp_target);
        const VectorField m0 = read_vector_field(exp_m0);
        require_same_geometry(m0.geometry(), moving.geometry(), "momentum and images");
        const RunConfig config = load_config(common, moving.geometry().rank());
        config.validate();
        PatchBatch batch = extract(moving, target, plan_grid(moving.geometry(), config.train_patches()), &m0);
        const std::size_t total = batch.indices.size();
        if (config.prune) batch = prune(batch, config.prune_threshold(moving, target));
        write_batch(exp_out, batch);
        log("export-batch: kept " + std::to_string(batch.indices.size()) + " of " + std::to_string(total) +
            " patches");
    });

    // train
    auto *tr = app.add_subcommand("train", "Fit the momentum network to exported batches");
    std::vector<std::string> tr_batches;
    std::string tr_out, tr_init, tr_loss;
    std::int64_t tr_seed = -1;
    int tr_epochs = -1;
    tr->add_option("--batch", tr_batches, "Training batch files")->required();
    tr->add_option("--out", tr_out, "Weights output")->required();
    tr->add_option("--init", tr_init, "Continue from these weights");
    tr->add_option("--loss-csv", tr_loss, "Per-epoch loss CSV");
    tr->add_option("--seed", tr_seed, "Overrides train.rng_seed")->check(CLI::NonNegativeNumber);
    tr->add_option("--epochs", tr_epochs, "Overrides train.epochs")->check(CLI::PositiveNumber);
    add_common(tr, common);
    tr->callback([&] {
        std::vector<PatchBatch> batches;
        for (const std::string &p : tr_batches) batches.push_back(read_batch(p));
        const int rank = batches.front().rank();
        RunConfig config = load_config(common, rank);
        if (tr_seed >= 0) config.train.rng_seed = static_cast<std::uint64_t>(tr_seed);
        if (tr_epochs > 0) config.train.epochs = tr_epochs;
        config.patch_size = batches.front().grid.spec.size.front();
        config.validate();
        auto on_epoch = [](int epoch, double loss) {
            std::ostringstream msg;
            msg << "train: epoch=" << epoch << " loss=" << loss;
            log(msg.str());
        };
        TrainResult result = tr_init.empty()
                                 ? train(batches, config.net_config(), config.train, on_epoch)
                                 : train(batches, read_weights(tr_init), config.train, on_epoch);
        write_weights(tr_out, result.weights);
        if (!tr_loss.empty()) {
            auto os = open_output(tr_loss);
            os.precision(17);
            os << "epoch,loss\n";
            for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) os << e << ',' << result.epoch_loss[e] << '\n';
        }
    });

    // predict
    auto *pr = app.add_subcommand("predict", "Predict the initial momentum of an image pair");
    std::string pr_weights, pr_moving, pr_target, pr_m0, pr_map;
    int pr_stride = 0;
    pr->add_option("--weights", pr_weights, "Trained weights")->required();
    pr->add_option("--moving", pr_moving, "Moving image")->required();
    pr->add_option("--target", pr_target, "Target image")->required();
    pr->add_option("--out-m0", pr_m0, "Predicted momentum output")->required();
    pr->add_option("--out-map", pr_map, "Deformation map output");
    pr->add_option("--stride", pr_stride, "Overrides patch.predict_stride")->check(CLI::PositiveNumber);
    add_common(pr, common);
    pr->callback([&] {
        auto [moving, target] = read_pair(pr_moving, pr_target);
        const NetworkWeights w = read_weights(pr_weights);
        RunConfig config = load_config(common, moving.geometry().rank());
        if (pr_stride > 0) config.predict_stride = pr_stride;
        config.patch_size = w.config.patch_size;
        config.validate();
        if (w.config.rank != moving.geometry().rank()) throw GeometryMismatch("weights rank does not match images");
        const auto t0 = std::chrono::steady_clock::now();
        const Prediction p = predict_image(w, moving, target, config.predict_patches(),
                                           config.prune_threshold(moving, target));
        const double secs = seconds_since(t0);
        write_field(pr_m0, p.m0);
        if (!pr_map.empty()) write_field(pr_map, shoot(p.m0, config.shooting_config(moving.geometry())));
        std::ostringstream msg;
        msg.precision(4);
        msg << "predict: patches=" << p.patches << " kept=" << p.kept << " pruned="
            << std::fixed << 100.0 * double(p.patches - p.kept) / double(std::max<std::size_t>(p.patches, 1))
            << "% seconds=" << secs;
        log(msg.str());
    });

    // shoot
    auto *sh = app.add_subcommand("shoot", "Integrate an initial momentum to a deformation map");
    std::string sh_m0, sh_out, sh_image, sh_out_image;
    sh->add_option("--m0", sh_m0, "Initial momentum")->required();
    sh->add_option("--out", sh_out, "Deformation map output")->required();
    sh->add_option("--image", sh_image, "Image to warp through the map");
    sh->add_option("--out-image", sh_out_image, "Warped image output")->needs(sh->get_option("--image"));
    add_common(sh, common);
    sh->callback([&] {
        const VectorField m0 = read_vector_field(sh_m0);
        const RunConfig config = load_config(common, m0.geometry().rank());
        config.validate();
        const DeformationMap phi = shoot(m0, config.shooting_config(m0.geometry()));
        write_field(sh_out, phi);
        if (!sh_image.empty()) {
            const ScalarField img = read_image(sh_image);
            require_same_geometry(img.geometry(), m0.geometry(), "image and momentum");
            if (sh_out_image.empty()) throw InvalidArgument("--image needs --out-image");
            write_field(sh_out_image, warp(img, phi));
        }
        log("shoot: min_detJ=" + std::to_string(min_det(phi)));
    });

    // uncertainty
    auto *un = app.add_subcommand("uncertainty", "Monte Carlo dropout uncertainty of a predicted deformation");
    std::string un_weights, un_moving, un_target, un_prefix;
    int un_samples = 0;
    std::int64_t un_seed = -1;
    un->add_option("--weights", un_weights, "Trained weights")->required();
    un->add_option("--moving", un_moving, "Moving image")->required();
    un->add_option("--target", un_target, "Target image")->required();
    un->add_option("--out-prefix", un_prefix, "Output path prefix")->required();
    un->add_option("--samples", un_samples, "Overrides uncertainty.samples")->check(CLI::PositiveNumber);
    un->add_option("--seed", un_seed, "Overrides uncertainty.rng_seed")->check(CLI::NonNegativeNumber);
    add_common(un, common);
    un->callback([&] {
        auto [moving, target] = read_pair(un_moving, un_target);
        const NetworkWeights w = read_weights(un_weights);
        RunConfig config = load_config(common, moving.geometry().rank());
        if (un_samples > 0) config.uncertainty.samples = un_samples;
        if (un_seed >= 0) config.uncertainty.rng_seed = static_cast<std::uint64_t>(un_seed);
        config.patch_size = w.config.patch_size;
        config.validate();
        const auto samples = sample_predictions(w, moving, target, config.predict_patches(),
                                                config.prune_threshold(moving, target), config.uncertainty);
        const UncertaintyResult r = summarize(samples, config.shooting_config(moving.geometry()));
        write_field(un_prefix + "mean_m0.field", r.mean_m0);
        write_field(un_prefix + "mean_map.field", r.mean_phi);
        write_field(un_prefix + "variance.field", r.variance);
        write_field(un_prefix + "uncertainty.field", r.uncertainty);
        const double hi = max_abs(r.uncertainty.values());
        if (moving.geometry().rank() == 2) write_pgm(un_prefix + "uncertainty.pgm", r.uncertainty, 0.0, hi);
        std::ostringstream msg;
        msg << "uncertainty: samples=" << samples.size() << " max=" << hi << (r.degenerate ? " degenerate" : "");
        log(msg.str());
    });

    // eval
    auto *ev = app.add_subcommand("eval", "Error percentiles against ground-truth maps");
    std::vector<std::string> ev_truth, ev_pred;
    std::string ev_out, ev_label = "prediction";
    ev->add_option("--truth", ev_truth, "Ground-truth maps, one per case")->required();
    ev->add_option("--pred", ev_pred, "Predicted maps, same order as --truth");
    ev->add_option("--label", ev_label, "Row label of the predictions");
    ev->add_option("--out", ev_out, "CSV output (default: stdout)");
    add_common(ev, common);
    ev->callback([&] {
        if (!ev_pred.empty() && ev_pred.size() != ev_truth.size())
            throw InvalidArgument("eval: --pred and --truth need the same number of files");
        std::vector<DeformationMap> truth;
        for (const auto &p : ev_truth) truth.push_back(read_deformation_map(p));
        std::vector<ScalarField> id_err;
        std::vector<DeformationMap> id_maps;
        for (const auto &t : truth) {
            id_maps.push_back(DeformationMap::identity(t.geometry()));
            id_err.push_back(deformation_error(id_maps.back(), t));
        }
        std::vector<std::pair<std::string, ErrorReport>> rows{{"identity", report(id_err, id_maps)}};
        if (!ev_pred.empty()) {
            std::vector<DeformationMap> pred;
            std::vector<ScalarField> err;
            for (std::size_t i = 0; i < ev_pred.size(); ++i) {
                pred.push_back(read_deformation_map(ev_pred[i]));
                err.push_back(deformation_error(pred.back(), truth[i]));
            }
            rows.emplace_back(ev_label, report(err, pred));
        }
        if (ev_out.empty()) {
            write_report_csv(std::cout, rows);
        } else {
            auto os = open_output(ev_out);
            write_report_csv(os, rows);
        }
        for (const auto &[label, r] : rows) {
            std::ostringstream msg;
            msg << "eval: " << label << " median=" << r.percentiles[3] << " detJ_positive=" << r.detj_ratio;
            log(msg.str());
        }
    });

    // atlas
    auto *at = app.add_subcommand("atlas", "Iterative mean template of a set of images");
    std::vector<std::string> at_images;
    std::string at_out;
    int at_rounds = 2;
    at->add_option("--image", at_images, "Input images")->required();
    at->add_option("--rounds", at_rounds, "Register-and-average rounds")->check(CLI::NonNegativeNumber);
    at->add_option("--out", at_out, "Atlas output")->required();
    add_common(at, common);
    at->callback([&] {
        std::vector<ScalarField> images;
        for (const auto &p : at_images) images.push_back(read_image(p));
        const RunConfig config = load_config(common, images.front().geometry().rank());
        config.validate();
        write_field(at_out, build_atlas(images, at_rounds, config.registration_config(images.front().geometry())));
    });

    // gen-synthetic
    auto *gs = app.add_subcommand("gen-synthetic", "Brain-like phantom pairs with known deformations");
    int gs_size = 64, gs_rank = 2, gs_count = 10;
    std::int64_t gs_seed = 0;
    double gs_amp = SyntheticConfig{}.amplitude;
    std::string gs_dir;
    bool gs_pgm = false;
    gs->add_option("--size", gs_size, "Grid points per axis")->check(CLI::Range(8, 4096));
    gs->add_option("--rank", gs_rank, "2 or 3")->check(CLI::IsMember({2, 3}));
    gs->add_option("--count", gs_count, "Number of pairs")->check(CLI::PositiveNumber);
    gs->add_option("--seed", gs_seed, "Corpus seed")->check(CLI::NonNegativeNumber);
    gs->add_option("--amplitude", gs_amp, "Max initial velocity (grid units)")->check(CLI::NonNegativeNumber);
    gs->add_option("--out-dir", gs_dir, "Output directory")->required();
    gs->add_flag("--pgm", gs_pgm, "Also write PGM previews (2D)");
    add_common(gs, common);
    gs->callback([&] {
        const RunConfig config = load_config(common, gs_rank);
        config.validate();
        const GridGeometry g(std::vector<int>(gs_rank, gs_size));
        std::filesystem::create_directories(gs_dir);
        const ScalarField templ = brain_template(g);
        SyntheticConfig sc;
        sc.amplitude = gs_amp;
        const auto corpus = make_corpus(templ, static_cast<std::size_t>(gs_count), static_cast<std::uint64_t>(gs_seed),
                                        sc, config.shooting_config(g));
        const std::filesystem::path dir(gs_dir);
        write_field((dir / "template.field").string(), templ);
        if (gs_pgm && gs_rank == 2) write_pgm((dir / "template.pgm").string(), templ, 0.0, max_abs(templ.values()));
        auto manifest = open_output((dir / "manifest.csv").string());
        manifest << "case,seed,moving,target,truth_map,truth_m0\n";
        for (std::size_t i = 0; i < corpus.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "case_%03zu", i);
            const std::string base = (dir / name).string();
            write_field(base + "_target.field", corpus[i].target);
            write_field(base + "_truth_map.field", corpus[i].phi);
            write_field(base + "_truth_m0.field", corpus[i].m0);
            if (gs_pgm && gs_rank == 2)
                write_pgm(base + "_target.pgm", corpus[i].target, 0.0, max_abs(templ.values()));
            manifest << i << ',' << corpus[i].seed << ",template.field," << name << "_target.field," << name
                     << "_truth_map.field," << name << "_truth_m0.field\n";
        }
        log("gen-synthetic: wrote " + std::to_string(corpus.size()) + " pairs, background fraction " +
            std::to_string(background_fraction(templ, default_background_threshold(templ, templ))));
    });

    std::string command;
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp &e) {
        return app.exit(e);
    } catch (const CLI::ParseError &e) {
        if (!app.get_subcommands().empty()) command = app.get_subcommands().front()->get_name();
        return fail(command, 1, "usage", e.what());
    } catch (const NumericalError &e) {
        command = app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name();
        return fail(command, 2, "numerical", e.what());
    } catch (const Error &e) {
        command = app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name();
        return fail(command, 1, "input", e.what());
    } catch (const std::exception &e) {
        command = app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name();
        return fail(command, 1, "input", e.what());
    }
    return 0;
}
