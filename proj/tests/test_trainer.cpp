#include <doctest.h>

#include <algorithm>
#include <random>

#include "test_util.hpp"
#include "vispe/binio.hpp"
#include "vispe/errors.hpp"
#include "vispe/keyvalue.hpp"
#include "vispe/trainer.hpp"

using namespace vispe;

namespace {

MultiviewDataset small_train(std::uint64_t seed = 0) {
    return split_seen_unseen(generate(testutil::small_spec(seed))).train;
}

TrainConfig quick(Mode mode, std::size_t epochs = 5) {
    auto cfg = default_config(mode);
    cfg.batch_instances = 4;
    cfg.epochs = epochs;
    cfg.hidden_dims = {16, 12};
    cfg.embed_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("defaults") {
    const TrainConfig c;
    CHECK(c.tau == 0.05);
    CHECK(c.alpha == 5.0);
    CHECK(c.threshold == 0.5);
    CHECK(c.batch_instances == 32);
    CHECK(c.lr == 0.001);
    CHECK(c.epochs == 100);
    CHECK(c.margin == 1.0);
    CHECK_FALSE(c.stop_grad_protos);
    CHECK(c.resample == ResampleGranularity::epoch);
    const auto pe = default_config(Mode::pe);
    CHECK(pe.threshold == 0.0);
    CHECK(pe.alpha == 0.0);
    CHECK(default_config(Mode::mvspe).alpha == 0.0);
    for (auto m : all_modes()) CHECK_NOTHROW(default_config(m).validate_mode_invariants());
}

TEST_CASE("config files") {
    SUBCASE("values are read and echoed") {
        const auto cfg = load_train_config(KeyValueFile::parse("mode = vispe\ntau = 0.1\nalpha = 2\nt = 1\nepochs = 7\n"
                                                               "hidden_dims = 32, 16\nseed = 12345678901234\n"));
        CHECK(cfg.mode == Mode::vispe);
        CHECK(cfg.tau == 0.1);
        CHECK(cfg.alpha == 2.0);
        CHECK(cfg.threshold == 1.0);
        CHECK(cfg.epochs == 7);
        CHECK(cfg.hidden_dims == std::vector<std::size_t>{32, 16});
        CHECK(cfg.seed == 12345678901234ULL);
        CHECK(load_train_config(KeyValueFile::parse(config_to_text(cfg))) == cfg);
    }
    SUBCASE("mode invariants") {
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("mode = pe\nt = 0.5\n")), ConfigError);
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("mode = pe\nalpha = 1\n")), ConfigError);
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("mode = mvspe\nalpha = 5\n")), ConfigError);
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("mode = vispe\nalpha = 0\n")), ConfigError);
        CHECK(load_train_config(KeyValueFile::parse("t = 0.5\n"), Mode::mvspe).alpha == 0.0);
        CHECK(load_train_config(KeyValueFile::parse("mode = pe\n"), Mode::vispe).mode == Mode::vispe);
    }
    SUBCASE("range checks and unknown keys") {
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("tau = 0\n")), ConfigError);
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("t = 1.5\n")), ConfigError);
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("m = 0\n")), ConfigError);
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("lr = -1\n")), ConfigError);
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("learning_rate = 0.1\n")), ConfigError);
        CHECK_THROWS_AS(load_train_config(KeyValueFile::parse("mode = byol\n")), ConfigError);
    }
}

TEST_CASE("sgd step") {
    std::vector<double> theta{1.0, -2.0, 3.0};
    sgd_step(theta, std::vector<double>{0.0, 0.0, 0.0}, 0.5);
    CHECK(theta == std::vector<double>{1.0, -2.0, 3.0});
    const auto g = theta;
    sgd_step(theta, g, 1.0);
    CHECK(theta == std::vector<double>{0.0, 0.0, 0.0});

    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> t(50), gr(50);
    for (auto& v : t) v = n(rng);
    for (auto& v : gr) v = n(rng);
    auto want = t;
    for (std::size_t i = 0; i < t.size(); ++i) want[i] = t[i] - 0.01 * gr[i];
    sgd_step(t, gr, 0.01);
    CHECK(t == want);
    CHECK_THROWS_AS(sgd_step(t, std::vector<double>(3), 0.1), ConfigError);
}

TEST_CASE("zero epochs or zero learning rate leave the initial parameters") {
    const auto ds = small_train();
    auto cfg = quick(Mode::vispe, 0);
    const auto init_params = start_training(cfg, ds).params;
    const auto r0 = train(cfg, ds);
    CHECK(r0.params == init_params);
    CHECK(r0.history.empty());

    cfg.epochs = 3;
    cfg.lr = 0.0;
    const auto r1 = train(cfg, ds);
    CHECK(r1.params == init_params);
    CHECK(r1.history.size() == 3);
    for (std::size_t e = 0; e < 3; ++e) CHECK(r1.history[e].epoch == e + 1);
}

TEST_CASE("training is deterministic in the seed") {
    const auto ds = small_train();
    for (auto mode : all_modes()) {
        CAPTURE(to_string(mode));
        const auto cfg = quick(mode, 3);
        const auto a = train(cfg, ds);
        const auto b = train(cfg, ds);
        CHECK(a.params == b.params);
        auto other = cfg;
        other.seed = 1;
        CHECK_FALSE(train(other, ds).params == a.params);
    }
}

TEST_CASE("mode degeneracies are bit exact") {
    const auto ds = small_train(2);
    auto vispe0 = quick(Mode::vispe, 5);
    vispe0.alpha = 0.0;
    const auto mv = quick(Mode::mvspe, 5);
    CHECK(train(vispe0, ds).params == train(mv, ds).params);

    auto mv0 = quick(Mode::mvspe, 5);
    mv0.threshold = 0.0;
    CHECK(train(mv0, ds).params == train(quick(Mode::pe, 5), ds).params);
}

TEST_CASE("stored view angles are never read by training") {
    auto ds = small_train(3);
    const auto cfg = quick(Mode::vispe, 3);
    const auto before = train(cfg, ds).params;
    std::mt19937_64 rng(5);
    for (auto& o : ds.objects) {
        std::shuffle(o.view_angles.begin(), o.view_angles.end(), rng);
        for (auto& a : o.view_angles) a = std::fmod(a + 1.0, 6.0);
    }
    CHECK(train(cfg, ds).params == before);
}

TEST_CASE("training needs at least m instances") {
    const auto ds = small_train();
    auto cfg = quick(Mode::vispe);
    cfg.batch_instances = ds.objects.size() + 1;
    CHECK_THROWS_AS(train(cfg, ds), ConfigError);
}

TEST_CASE("divergence is reported with the epoch") {
    const auto ds = small_train();
    // The linear instance head is unbounded, so its logits overflow.
    auto cfg = quick(Mode::instance, 50);
    cfg.lr = 1e300;
    try {
        train(cfg, ds);
        FAIL("expected divergence");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("history records one entry per epoch with resample counts") {
    const auto ds = small_train();
    auto cfg = quick(Mode::mvspe, 4);
    cfg.threshold = 1.0;
    std::size_t calls = 0;
    const auto r = train(cfg, ds, [&](const EmbedderParams&, std::size_t epoch) -> std::optional<double> {
        ++calls;
        return static_cast<double>(epoch);
    });
    CHECK(calls == 4);
    REQUIRE(r.history.size() == 4);
    for (const auto& h : r.history) {
        CHECK(h.resampled == ds.objects.size());
        CHECK(h.unseen_knn == static_cast<double>(h.epoch));
        CHECK(h.mean_kl >= 0.0);
        CHECK(std::isfinite(h.mean_kl));
        CHECK(std::isfinite(h.mean_loss));
    }
    cfg.resample = ResampleGranularity::iteration;
    const auto it = train(cfg, ds);
    const std::size_t iters = (ds.objects.size() + cfg.batch_instances - 1) / cfg.batch_instances;
    CHECK(it.history[0].resampled == iters * ds.objects.size());
}

TEST_CASE("checkpoints are byte identical across runs and resume continues the trajectory") {
    testutil::TempDir dir("ckpt");
    const auto ds = small_train(4);
    for (auto mode : all_modes()) {
        CAPTURE(to_string(mode));
        const auto cfg = quick(mode, 10);
        auto a = start_training(cfg, ds);
        run_epochs(a, ds, 5);
        auto b = start_training(cfg, ds);
        run_epochs(b, ds, 5);
        checkpoint(a, dir / "a");
        checkpoint(b, dir / "b");
        for (const char* f : {"model.json", "weights.bin"})
            CHECK(binio::read_text(dir / "a" / f) == binio::read_text(dir / "b" / f));

        auto resumed = resume(dir / "a", ds);
        CHECK(resumed.epoch == 5);
        CHECK(resumed.bank == a.bank);
        CHECK(resumed.params == a.params);
        CHECK(resumed.class_ids == a.class_ids);
        run_epochs(resumed, ds, 10);
        run_epochs(b, ds, 10);
        CHECK(resumed.params == b.params);
        CHECK(resumed.bank == b.bank);
        REQUIRE(resumed.history.size() == 10);
        for (std::size_t e = 0; e < 10; ++e) CHECK(resumed.history[e].mean_loss == b.history[e].mean_loss);

        const auto loaded = load_model(dir / "a");
        CHECK(loaded.params == a.params);
        CHECK(loaded.config == cfg);
        CHECK(loaded.epoch == 5);
    }
}

TEST_CASE("resume rejects a dataset that does not fit") {
    testutil::TempDir dir("ckpt_bad");
    const auto ds = small_train(4);
    auto s = start_training(quick(Mode::vispe), ds);
    run_epochs(s, ds, 1);
    checkpoint(s, dir.path());

    auto spec = testutil::small_spec(4);
    spec.obs_dim = 12;
    const auto wide = split_seen_unseen(generate(spec)).train;
    CHECK_THROWS_AS(resume(dir.path(), wide), ConfigError);

    auto fewer = ds;
    fewer.objects.pop_back();
    CHECK_THROWS_AS(resume(dir.path(), fewer), ConfigError);

    std::filesystem::resize_file(dir / "weights.bin", 16);
    CHECK_THROWS_AS(resume(dir.path(), ds), FormatError);
}

TEST_CASE("every mode makes progress on the default dataset within 20 epochs") {
    const auto ds = split_seen_unseen(generate(SyntheticSpec{})).train;
    for (auto mode : all_modes()) {
        CAPTURE(to_string(mode));
        auto cfg = default_config(mode);
        cfg.epochs = 20;
        const auto r = train(cfg, ds);
        CHECK(r.history.back().mean_loss < r.history.front().mean_loss);
    }
}
