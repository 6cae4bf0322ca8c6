// vispe: generate synthetic multiview data, train prototype embeddings,
// evaluate them on seen/unseen classes and run the ablation sweeps.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vispe/binio.hpp"
#include "vispe/dataio.hpp"
#include "vispe/errors.hpp"
#include "vispe/evalsuite.hpp"
#include "vispe/keyvalue.hpp"
#include "vispe/objective.hpp"
#include "vispe/pipeline.hpp"
#include "vispe/trainer.hpp"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitIo = 5;

using namespace vispe;

TrainConfig config_from_flags(const std::string& config_path, const std::string& mode_flag) {
    std::optional<Mode> mode;
    if (!mode_flag.empty()) mode = parse_mode(mode_flag);
    if (config_path.empty()) {
        TrainConfig cfg = default_config(mode.value_or(Mode::vispe));
        cfg.validate_mode_invariants();
        return cfg;
    }
    return load_train_config(KeyValueFile::load(config_path), mode);
}

int cmd_gen(const std::string& spec_path, const std::string& out, std::optional<std::uint64_t> seed) {
    auto spec = load_synthetic_spec(KeyValueFile::load(spec_path));
    if (seed) spec.seed = *seed;
    const auto ds = generate(spec);
    save(ds, out);
    std::cout << "wrote " << ds.objects.size() << " objects, " << ds.total_views() << " views to " << out << '\n';
    return 0;
}

int cmd_train(const std::string& data, const std::string& mode, const std::string& config_path, const std::string& out,
              bool track_unseen) {
    const auto cfg = config_from_flags(config_path, mode);
    const auto ds = load(data);
    const auto parts = split_seen_unseen(ds);
    auto state = start_training(cfg, parts.train);
    EpochHook hook;
    if (track_unseen) {
        hook = [&ds](const EmbedderParams& p, std::size_t) -> std::optional<double> { return unseen_knn_accuracy(p, ds); };
    }
    run_epochs(state, parts.train, cfg.epochs, hook);
    checkpoint(state, out);
    const auto& last = state.history.empty() ? EpochRecord{} : state.history.back();
    std::cout << "mode " << to_string(cfg.mode) << ": " << state.epoch << " epochs, final mean loss " << last.mean_loss
              << ", checkpoint in " << out << '\n';
    return 0;
}

int cmd_eval(const std::string& data, const std::string& model, const std::string& split, const std::string& report,
             std::optional<std::size_t> k, std::uint64_t seed) {
    const auto ds = load(data);
    const auto m = load_model(model);
    EvalOptions opts;
    opts.k_override = k;
    opts.seed = seed;
    const auto r = evaluate(m.params, ds, split, opts);
    binio::write_text(report, report_to_json(r, config_to_text(m.config)));
    std::cout << "knn seen " << r.knn_accuracy_seen << " (k=" << r.k_used_seen << "), unseen " << r.knn_accuracy_unseen
              << " (k=" << r.k_used_unseen << "), " << split << " recall@1 " << r.recall_at.begin()->second << ", nmi "
              << r.nmi << '\n';
    return 0;
}

int cmd_gradcheck(double eps, std::uint64_t seed, const std::string& mode, std::size_t coords, std::size_t n_seeds,
                  bool strict) {
    std::vector<Mode> modes;
    if (mode == "all") {
        modes = all_modes();
    } else {
        modes.push_back(parse_mode(mode));
    }
    constexpr double kTolerance = 1e-4;
    double worst = 0.0;
    for (auto m : modes) {
        double mode_worst = 0.0;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            GradCheckOptions opts;
            opts.eps = eps;
            opts.coordinates = coords;
            opts.seed = seed + s;
            mode_worst = std::max(mode_worst, gradcheck_mode(m, seed + s, opts).max_rel_error);
        }
        std::cout << to_string(m) << " max_rel_error " << mode_worst << (mode_worst < kTolerance ? "  ok" : "  FAIL")
                  << '\n';
        worst = std::max(worst, mode_worst);
    }
    if (worst < kTolerance) return 0;
    if (!strict) {
        std::cout << "informational run (--no-strict): errors above " << kTolerance << " not treated as failure\n";
        return 0;
    }
    return kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-supervised multiview prototype embeddings: data, training, evaluation, ablations"};
    app.require_subcommand(1, 1);

    std::string spec_path, out, data, mode, config_path, model, split, report, export_out;
    std::optional<std::uint64_t> gen_seed;
    bool track_unseen = false;

    auto* gen = app.add_subcommand("gen", "Generate a synthetic multiview dataset");
    gen->add_option("--spec", spec_path, "Synthetic spec file (key = value)")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", out, "Output dataset directory")->required();
    gen->add_option("--seed", gen_seed, "Override the spec's seed");

    auto* train_cmd = app.add_subcommand("train", "Train an embedding");
    train_cmd->add_option("--data", data, "Dataset directory")->required();
    train_cmd->add_option("--mode", mode, "instance | pe | mvspe | vispe | triplet | supervised");
    train_cmd->add_option("--config", config_path, "Training config file (key = value)");
    train_cmd->add_option("--out", out, "Checkpoint directory")->required();
    train_cmd->add_flag("--track-unseen", track_unseen, "Record unseen-class KNN accuracy after every epoch");

    std::optional<std::size_t> k_override;
    std::uint64_t eval_seed = 0;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained embedding");
    eval_cmd->add_option("--data", data, "Dataset directory")->required();
    eval_cmd->add_option("--model", model, "Checkpoint directory")->required();
    eval_cmd->add_option("--split", split, "seen | unseen")->required()->check(CLI::IsMember({"seen", "unseen"}));
    eval_cmd->add_option("--report", report, "Output JSON report")->required();
    eval_cmd->add_option("--k", k_override, "Override the KNN k rule");
    eval_cmd->add_option("--seed", eval_seed, "Seed for k-means and few-shot sampling");

    double eps = 1e-5;
    std::uint64_t gc_seed = 0;
    std::string gc_mode = "all";
    std::size_t gc_coords = 200;
    std::size_t gc_seeds = 1;
    bool no_strict = false;
    auto* gc = app.add_subcommand("gradcheck", "Compare analytic gradients with central differences");
    gc->add_option("--eps", eps, "Finite-difference step");
    gc->add_option("--seed", gc_seed, "Fixture seed");
    gc->add_option("--mode", gc_mode, "A mode name or `all`");
    gc->add_option("--coords", gc_coords, "Coordinates sampled per check");
    gc->add_option("--seeds", gc_seeds, "Number of consecutive seeds");
    gc->add_flag("--no-strict", no_strict, "Report errors without failing");

    std::string thresholds_text;
    std::size_t n_seeds = 5;
    auto* at = app.add_subcommand("ablate-threshold", "Unseen accuracy as a function of the randomization threshold");
    at->add_option("--thresholds", thresholds_text, "Comma-separated thresholds in [0,1]")->required();
    at->add_option("--seeds", n_seeds, "Seeds per threshold");
    at->add_option("--data", data, "Dataset directory")->required();
    at->add_option("--report", report, "Output JSON report")->required();
    at->add_option("--config", config_path, "Training config file");
    at->add_option("--mode", mode, "Training mode (default mvspe)");

    std::string objects_text, views_text;
    std::uint64_t subsample_seed = 0;
    auto* ag = app.add_subcommand("ablate-grid", "Unseen accuracy over objects-per-class x views-per-object");
    ag->add_option("--objects", objects_text, "Comma-separated objects per class")->required();
    ag->add_option("--views", views_text, "Comma-separated views per object")->required();
    ag->add_option("--data", data, "Dataset directory")->required();
    ag->add_option("--report", report, "Output JSON report")->required();
    ag->add_option("--config", config_path, "Training config file");
    ag->add_option("--subsample-seed", subsample_seed, "Seed for object/view subsampling");

    auto* ex = app.add_subcommand("export", "Write embeddings of every view in dataset format");
    ex->add_option("--data", data, "Dataset directory")->required();
    ex->add_option("--model", model, "Checkpoint directory")->required();
    ex->add_option("--out", export_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*gen) return cmd_gen(spec_path, out, gen_seed);
        if (*train_cmd) return cmd_train(data, mode, config_path, out, track_unseen);
        if (*eval_cmd) return cmd_eval(data, model, split, report, k_override, eval_seed);
        if (*gc) return cmd_gradcheck(eps, gc_seed, gc_mode, gc_coords, gc_seeds, !no_strict);
        if (*at) {
            const auto cfg = config_from_flags(config_path, mode.empty() ? "mvspe" : mode);
            const auto ds = load(data);
            const auto rows = ablate_threshold(ds, cfg, parse_double_list(thresholds_text), n_seeds);
            binio::write_text(report, threshold_report_json(rows, cfg, n_seeds));
            for (const auto& r : rows) std::cout << "t=" << r.threshold << " mean " << r.mean << " std " << r.stddev << '\n';
            return 0;
        }
        if (*ag) {
            const auto cfg = config_from_flags(config_path, "vispe");
            const auto ds = load(data);
            const auto rep = ablate_grid(ds, cfg, parse_size_list(objects_text), parse_size_list(views_text), subsample_seed);
            binio::write_text(report, grid_report_json(rep, cfg, subsample_seed));
            std::cout << "grid " << rep.objects.size() << "x" << rep.views.size() << " written to " << report << '\n';
            return 0;
        }
        if (*ex) {
            const auto ds = load(data);
            const auto m = load_model(model);
            export_embeddings(m.params, ds, export_out);
            std::cout << "exported " << ds.total_views() << " embeddings to " << export_out << '\n';
            return 0;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kExitIo;
    }
    return kExitUsage;
}
