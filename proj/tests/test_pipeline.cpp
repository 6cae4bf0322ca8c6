#include <doctest.h>

#include "test_util.hpp"
#include "vispe/errors.hpp"
#include "vispe/evalsuite.hpp"
#include "vispe/pipeline.hpp"

using namespace vispe;

namespace {

TrainConfig short_config(Mode mode) {
    auto cfg = default_config(mode);
    cfg.epochs = 3;
    cfg.batch_instances = 4;
    cfg.hidden_dims = {16, 12};
    cfg.embed_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("threshold ablation rows are sorted and t = 0 reproduces pe") {
    const auto ds = generate(testutil::small_spec(1));
    const auto base = short_config(Mode::mvspe);
    const auto rows = ablate_threshold(ds, base, {1.0, 0.0, 0.5}, 3);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].threshold == 0.0);
    CHECK(rows[1].threshold == 0.5);
    CHECK(rows[2].threshold == 1.0);
    for (const auto& r : rows) CHECK(r.accuracies.size() == 3);
    for (std::size_t s = 0; s < 3; ++s) {
        auto pe = short_config(Mode::pe);
        pe.seed = base.seed + s;
        CHECK(rows[0].accuracies[s] == train_and_score_unseen(pe, ds));
    }
    const auto json = threshold_report_json(rows, base, 3);
    CHECK(json.find("\"rows\"") != std::string::npos);
    CHECK_THROWS_AS(ablate_threshold(ds, base, {0.5}, 0), ConfigError);
}

TEST_CASE("a 1x1 grid equals a plain train and evaluation on the same subsample") {
    const auto ds = generate(testutil::small_spec(2));
    const auto cfg = short_config(Mode::vispe);
    const auto rep = ablate_grid(ds, cfg, {3}, {2}, 5);
    REQUIRE(rep.cells.size() == 1);
    const auto sub = subsample_training(ds, 3, 2, 5);
    const auto parts = split_seen_unseen(sub);
    const auto trained = train(cfg, parts.train);
    CHECK(rep.cells[0].accuracy == unseen_knn_accuracy(trained.params, sub));
    for (const auto& o : parts.train.objects) CHECK(o.view_count() == 2);
    // Unseen evaluation objects are never subsampled.
    CHECK(split_seen_unseen(sub).unseen.total_views() == split_seen_unseen(ds).unseen.total_views());
}

TEST_CASE("grid report layout and monotone fractions") {
    const auto ds = generate(testutil::small_spec(3));
    const auto rep = ablate_grid(ds, short_config(Mode::vispe), {2, 4}, {1, 3}, 1);
    CHECK(rep.cells.size() == 4);
    CHECK(rep.at(1, 0).objects_per_class == 4);
    CHECK(rep.at(1, 0).views_per_object == 1);
    CHECK(rep.objects_monotone_fraction >= 0.0);
    CHECK(rep.objects_monotone_fraction <= 1.0);
    const auto json = grid_report_json(rep, short_config(Mode::vispe), 1);
    CHECK(json.find("\"accuracy\"") != std::string::npos);
    CHECK_THROWS_AS(ablate_grid(ds, short_config(Mode::vispe), {}, {1}, 1), ConfigError);
}

TEST_CASE("oversized minibatches are clamped in sweeps") {
    const auto ds = generate(testutil::small_spec(4));
    auto cfg = short_config(Mode::vispe);
    cfg.batch_instances = 1000;
    set_warnings_enabled(false);
    const double acc = train_and_score_unseen(cfg, ds);
    set_warnings_enabled(true);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
}
