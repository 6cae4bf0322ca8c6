#include "vispe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "vispe/errors.hpp"
#include "vispe/evalsuite.hpp"

namespace vispe {

using nlohmann::json;

namespace {

json config_json(const TrainConfig& cfg) {
    json j = json::object();
    const auto parsed = KeyValueFile::parse(config_to_text(cfg), "config");
    for (const auto& [k, v] : parsed.entries()) j[k] = v;
    return j;
}

double monotone_fraction(std::size_t pairs, std::size_t ok) {
    return pairs == 0 ? 1.0 : static_cast<double>(ok) / static_cast<double>(pairs);
}

}  // namespace

GradcheckFixture make_gradcheck_fixture(Mode mode, std::uint64_t seed, std::size_t m, const Arch& arch) {
    SyntheticSpec spec;
    spec.n_classes = 3;
    spec.seen_classes = 2;
    spec.objects_per_class = 4;
    spec.test_objects_per_class = 1;
    spec.views_min = 1;
    spec.views_max = 4;
    spec.latent_dim = 4;
    spec.obs_dim = arch.input_dim;
    spec.seed = seed;

    GradcheckFixture fx;
    fx.ds = std::make_unique<MultiviewDataset>(split_seen_unseen(generate(spec)).train);
    const auto& ds = *fx.ds;
    TrainConfig cfg = default_config(mode);
    fx.settings = cfg.loss_settings();
    std::size_t head_rows = 0;
    if (mode == Mode::instance) head_rows = ds.objects.size();
    if (mode == Mode::supervised) {
        for (std::size_t c = 0; c < ds.class_count(); ++c)
            if (ds.class_seen[c]) fx.settings.class_ids.push_back(c);
        head_rows = fx.settings.class_ids.size();
    }
    fx.params = init(arch, derive_seed(seed, 21), head_rows);
    Rng rng = make_rng(seed, 22);
    std::normal_distribution<double> jitter(0.0, 0.05);
    for (auto& v : fx.params.theta) v += jitter(rng);
    const auto bank = init_bank(ds, cfg.threshold, derive_seed(seed, 23));
    const auto plan = sample_minibatch(ds, bank, std::min(m, ds.objects.size()), rng);
    fx.batch = build_batch(mode, ds, plan, rng);
    return fx;
}

GradCheckResult gradcheck_mode(Mode mode, std::uint64_t seed, const GradCheckOptions& opts, std::size_t m) {
    const auto fx = make_gradcheck_fixture(mode, seed, m);
    return gradient_check(fx.params, fx.batch, fx.settings, opts);
}

double train_and_score_unseen(const TrainConfig& cfg, const MultiviewDataset& ds) {
    const auto parts = split_seen_unseen(ds);
    TrainConfig run = cfg;
    if (run.batch_instances > parts.train.objects.size()) {
        log_warning("m = " + std::to_string(run.batch_instances) + " exceeds the " +
                    std::to_string(parts.train.objects.size()) + " training instances; clamping");
        run.batch_instances = parts.train.objects.size();
    }
    const auto result = train(run, parts.train);
    return unseen_knn_accuracy(result.params, ds);
}

std::vector<ThresholdRow> ablate_threshold(const MultiviewDataset& ds, const TrainConfig& base,
                                           std::vector<double> thresholds, std::size_t n_seeds) {
    if (n_seeds == 0) throw ConfigError("ablate-threshold needs at least one seed");
    std::sort(thresholds.begin(), thresholds.end());
    std::vector<ThresholdRow> rows;
    for (double t : thresholds) {
        ThresholdRow row;
        row.threshold = t;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            TrainConfig cfg = base;
            cfg.threshold = t;
            cfg.seed = base.seed + s;
            row.accuracies.push_back(train_and_score_unseen(cfg, ds));
        }
        double sum = 0.0;
        for (double a : row.accuracies) sum += a;
        row.mean = sum / static_cast<double>(n_seeds);
        double ss = 0.0;
        for (double a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
        row.stddev = n_seeds > 1 ? std::sqrt(ss / static_cast<double>(n_seeds - 1)) : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string threshold_report_json(const std::vector<ThresholdRow>& rows, const TrainConfig& base, std::size_t n_seeds) {
    json j;
    j["metric"] = "unseen_knn_accuracy";
    j["seeds"] = n_seeds;
    j["config"] = config_json(base);
    json arr = json::array();
    for (const auto& r : rows) {
        arr.push_back({{"t", r.threshold}, {"mean", r.mean}, {"std", r.stddev}, {"accuracies", r.accuracies}});
    }
    j["rows"] = std::move(arr);
    return j.dump(1) + "\n";
}

MultiviewDataset subsample_training(const MultiviewDataset& ds, std::size_t objects_per_class,
                                    std::size_t views_per_object, std::uint64_t subsample_seed) {
    const auto parts = split_seen_unseen(ds);
    const auto train = subsample(parts.train, objects_per_class, views_per_object, subsample_seed);
    MultiviewDataset out = train;
    for (const auto* part : {&parts.seen_test, &parts.unseen})
        out.objects.insert(out.objects.end(), part->objects.begin(), part->objects.end());
    for (std::size_t i = 0; i < out.objects.size(); ++i) out.objects[i].object_id = i;
    return out;
}

GridReport ablate_grid(const MultiviewDataset& ds, const TrainConfig& base, const std::vector<std::size_t>& objects,
                       const std::vector<std::size_t>& views, std::uint64_t subsample_seed) {
    if (objects.empty() || views.empty()) throw ConfigError("ablate-grid needs nonempty --objects and --views lists");
    GridReport rep;
    rep.objects = objects;
    rep.views = views;
    for (auto o : objects) {
        for (auto v : views) {
            const auto sub = subsample_training(ds, o, v, subsample_seed);
            rep.cells.push_back({o, v, train_and_score_unseen(base, sub)});
        }
    }
    std::size_t pairs = 0, ok = 0;
    for (std::size_t vi = 0; vi < views.size(); ++vi) {
        for (std::size_t oi = 0; oi + 1 < objects.size(); ++oi) {
            ++pairs;
            if (rep.at(oi + 1, vi).accuracy >= rep.at(oi, vi).accuracy) ++ok;
        }
    }
    rep.objects_monotone_fraction = monotone_fraction(pairs, ok);
    pairs = ok = 0;
    for (std::size_t oi = 0; oi < objects.size(); ++oi) {
        for (std::size_t vi = 0; vi + 1 < views.size(); ++vi) {
            ++pairs;
            if (rep.at(oi, vi + 1).accuracy >= rep.at(oi, vi).accuracy) ++ok;
        }
    }
    rep.views_monotone_fraction = monotone_fraction(pairs, ok);
    return rep;
}

std::string grid_report_json(const GridReport& rep, const TrainConfig& base, std::uint64_t subsample_seed) {
    json j;
    j["metric"] = "unseen_knn_accuracy";
    j["objects_per_class"] = rep.objects;
    j["views_per_object"] = rep.views;
    json grid = json::array();
    for (std::size_t oi = 0; oi < rep.objects.size(); ++oi) {
        json row = json::array();
        for (std::size_t vi = 0; vi < rep.views.size(); ++vi) row.push_back(rep.at(oi, vi).accuracy);
        grid.push_back(std::move(row));
    }
    j["accuracy"] = std::move(grid);
    j["tendency"] = {{"objects_monotone_fraction", rep.objects_monotone_fraction},
                     {"views_monotone_fraction", rep.views_monotone_fraction},
                     {"enforced", false}};
    j["subsample_seed"] = subsample_seed;
    j["config"] = config_json(base);
    return j.dump(1) + "\n";
}

}  // namespace vispe
