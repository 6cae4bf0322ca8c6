// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Every tolerance and sample size used below is fixed here.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "test_util.hpp"
#include "vispe/binio.hpp"
#include "vispe/errors.hpp"
#include "vispe/evalsuite.hpp"
#include "vispe/losses.hpp"
#include "vispe/pipeline.hpp"
#include "vispe/protobank.hpp"
#include "vispe/trainer.hpp"

using namespace vispe;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradEps = 1e-5;
constexpr std::size_t kGradCoordinates = 200;
constexpr std::size_t kGradSeeds = 3;
constexpr double kGradBudgetSeconds = 60.0;

constexpr double kNormTolerance = 1e-9;
constexpr double kAdditivityTolerance = 1e-12;
constexpr double kPairwiseTolerance = 1e-10;
constexpr std::size_t kAlgebraTrials = 500;

constexpr std::size_t kDegeneracyEpochs = 5;
constexpr double kDegeneracyBudgetSeconds = 60.0;

constexpr std::size_t kOracleInstances = 25;
constexpr double kNmiTolerance = 1e-12;
constexpr double kKMeansTolerance = 1e-9;

constexpr std::size_t kOrderingSeeds = 5;
constexpr double kMarginOverInstance = 0.05;
constexpr double kMarginOverChance = 0.20;
constexpr double kOrderingBudgetSeconds = 15.0 * 60.0;

constexpr std::size_t kThresholdSeeds = 5;
constexpr std::size_t kConvergenceSeeds = 3;
constexpr double kConvergenceFraction = 0.95;
constexpr std::size_t kFewObjects = 3;
constexpr std::size_t kTradeoffSeeds = 5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
    std::printf("criterion %d: %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// 1. Analytic gradients against central differences, every mode.
void gradient_exactness() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string per_mode;
    for (auto mode : all_modes()) {
        double mode_worst = 0.0;
        for (std::uint64_t seed = 0; seed < kGradSeeds; ++seed) {
            GradCheckOptions opts;
            opts.eps = kGradEps;
            opts.coordinates = kGradCoordinates;
            opts.seed = seed;
            const auto r = gradcheck_mode(mode, seed, opts);
            if (r.coordinates_checked < kGradCoordinates) mode_worst = INFINITY;
            mode_worst = std::max(mode_worst, r.max_rel_error);
        }
        per_mode += " " + to_string(mode) + "=" + fmt("%.2e", mode_worst);
        worst = std::max(worst, mode_worst);
    }
    const double secs = seconds_since(t0);
    report(1, worst < kGradTolerance && secs < kGradBudgetSeconds,
           "max rel error" + per_mode + fmt(", %.1fs", secs));
}

// 2. Loss algebra on random and enumerable instances.
void loss_algebra() {
    std::mt19937_64 rng(2024);
    double norm_err = 0.0, add_err = 0.0, kl_min = INFINITY, kl_self = 0.0;
    for (std::size_t trial = 0; trial < kAlgebraTrials; ++trial) {
        const std::size_t m = 2 + trial % 31, k = 8;
        const auto a = oracle::random_unit(k, rng);
        VecList s1, s2;
        for (std::size_t i = 0; i < m; ++i) {
            s1.push_back(oracle::random_unit(k, rng));
            s2.push_back(oracle::random_unit(k, rng));
        }
        const auto p = prototype_posterior(a, s1, 0.05);
        const auto q = prototype_posterior(a, s2, 0.05);
        double sum = 0.0;
        for (double v : p.probs) sum += v;
        norm_err = std::max(norm_err, std::abs(sum - 1.0));
        kl_min = std::min(kl_min, kl_div(p, q));
        kl_self = std::max(kl_self, std::abs(kl_div(p, p)));
        const auto br = total_loss(a, s1, s2, trial % m, 0.05, 5.0);
        add_err = std::max(add_err, std::abs(br.total - (br.l_s1 + br.l_s2 + 5.0 * br.l_kl)));
    }

    // m = 1: posterior is certain, loss and gradient vanish.
    double single_loss = 0.0, single_grad = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto fx = make_gradcheck_fixture(Mode::vispe, seed, 1);
        const auto r = loss_and_grads(fx.params, fx.batch, fx.settings);
        single_loss = std::max(single_loss, std::abs(r.total));
        for (double g : r.grad) single_grad = std::max(single_grad, std::abs(g));
    }

    // Ordered-pair formula on every prototype set of a tiny dataset.
    auto spec = testutil::small_spec(9);
    spec.n_classes = 2;
    spec.seen_classes = 1;
    spec.objects_per_class = 4;
    spec.test_objects_per_class = 1;
    spec.views_min = 2;
    spec.views_max = 3;
    const auto ds = generate(spec);
    Arch arch;
    arch.input_dim = ds.obs_dim;
    arch.hidden_dims = {12};
    arch.embed_dim = 6;
    const auto params = init(arch, 4);
    const std::vector<std::size_t> subset{0, 1, 2, 3};
    const auto combos = enumerate_prototype_sets(ds, subset);
    std::vector<VecList> sets;
    for (const auto& c : combos) {
        VecList s;
        for (std::size_t i = 0; i < subset.size(); ++i) s.push_back(embed(params, std::span<const float>(ds.objects[subset[i]].views[c[i]])));
        sets.push_back(std::move(s));
    }
    const auto anchor = embed(params, std::span<const float>(ds.objects[0].views[0]));
    const double formula = avg_pairwise_kl(anchor, sets, 0.05);
    double ordered_sum = 0.0;
    std::size_t ordered_pairs = 0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
        const auto pi = prototype_posterior(anchor, sets[i], 0.05);
        for (std::size_t j = 0; j < sets.size(); ++j) {
            if (i == j) continue;
            ordered_sum += kl_div(pi, prototype_posterior(anchor, sets[j], 0.05));
            ++ordered_pairs;
        }
    }
    const double pair_err = std::abs(formula - 2.0 * ordered_sum / static_cast<double>(ordered_pairs));

    const bool ok = norm_err <= kNormTolerance && kl_min >= 0.0 && kl_self == 0.0 && add_err <= kAdditivityTolerance &&
                    single_loss == 0.0 && single_grad == 0.0 && pair_err <= kPairwiseTolerance;
    report(2, ok,
           "norm err " + fmt("%.1e", norm_err) + ", min KL " + fmt("%.2e", kl_min) + ", KL(p,p) " +
               fmt("%.1e", kl_self) + ", additivity " + fmt("%.1e", add_err) + ", m=1 loss/grad " +
               fmt("%.1e", single_loss) + "/" + fmt("%.1e", single_grad) + ", pairwise err " + fmt("%.1e", pair_err) +
               " over " + std::to_string(sets.size()) + " sets");
}

// 3. vispe(alpha = 0) == mvspe and mvspe(t = 0) == pe, bit for bit.
void mode_degeneracy(const MultiviewDataset& train_ds) {
    const auto t0 = Clock::now();
    bool all = true;
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
        auto vispe0 = default_config(Mode::vispe);
        vispe0.alpha = 0.0;
        auto mv = default_config(Mode::mvspe);
        auto mv0 = default_config(Mode::mvspe);
        mv0.threshold = 0.0;
        auto pe = default_config(Mode::pe);
        for (auto* c : {&vispe0, &mv, &mv0, &pe}) {
            c->epochs = kDegeneracyEpochs;
            c->seed = seed;
        }
        all = all && train(vispe0, train_ds).params == train(mv, train_ds).params;
        all = all && train(mv0, train_ds).params == train(pe, train_ds).params;
    }
    const double secs = seconds_since(t0);
    report(3, all && secs < kDegeneracyBudgetSeconds,
           std::string(all ? "trajectories identical" : "trajectories differ") + " over " +
               std::to_string(kDegeneracyEpochs) + " epochs, 2 seeds" + fmt(", %.1fs", secs));
}

// 4. Metrics against brute-force oracles.
void metric_oracles() {
    std::mt19937_64 rng(77);
    std::size_t knn_bad = 0, recall_bad = 0, monotone_bad = 0, kmeans_bad = 0, nmi_bad = 0;
    for (std::size_t trial = 0; trial < kOracleInstances; ++trial) {
        const std::size_t classes = 2 + trial % 3;
        auto make = [&](std::size_t n) {
            EmbeddedSet s;
            for (std::size_t i = 0; i < n; ++i) s.push_back(oracle::random_unit(3, rng), i, i % classes, Split::train);
            return s;
        };
        const auto ref = make(6 + trial % 10);
        const auto q = make(10);
        const std::size_t k = 1 + trial % 5;
        const auto r = knn_classify(ref, q, k);
        for (std::size_t i = 0; i < q.size(); ++i)
            if (r.predictions[i] != oracle::knn_predict(ref.vectors, ref.class_ids, q.vectors[i], k)) ++knn_bad;

        const auto pts = make(20);
        const auto rec = recall_at_k(pts);
        double prev = 0.0;
        for (auto [K, v] : rec) {
            if (v != oracle::recall(pts.vectors, pts.class_ids, K)) ++recall_bad;
            if (v < prev) ++monotone_bad;
            prev = v;
        }

        const auto small = make(4 + trial % 9);  // at most 12 points
        const auto km = kmeans(small.vectors, 2, trial);
        if (std::abs(km.inertia - oracle::best_two_partition_inertia(small.vectors)) > kKMeansTolerance) ++kmeans_bad;

        std::uniform_int_distribution<std::size_t> ua(0, 3), uc(0, 2);
        std::vector<std::size_t> a(15), c(15);
        for (auto& v : a) v = ua(rng);
        for (auto& v : c) v = uc(rng);
        a[0] = 0;
        a[1] = 1;
        c[0] = 0;
        c[1] = 1;
        if (std::abs(nmi(a, c) - oracle::nmi(a, c)) > kNmiTolerance) ++nmi_bad;
    }
    const bool ok = knn_bad + recall_bad + monotone_bad + kmeans_bad + nmi_bad == 0;
    report(4, ok,
           std::to_string(kOracleInstances) + " instances each; mismatches knn " + std::to_string(knn_bad) + ", recall " +
               std::to_string(recall_bad) + " (non-monotone " + std::to_string(monotone_bad) + "), kmeans " +
               std::to_string(kmeans_bad) + ", nmi " + std::to_string(nmi_bad));
}

struct ModeScores {
    std::vector<double> unseen;
    std::vector<double> seen;
};

// 5. Unseen-class ordering on the default dataset (also returns per-mode seen accuracy for 8).
std::map<Mode, ModeScores> central_ordering(const MultiviewDataset& ds) {
    const auto t0 = Clock::now();
    const auto parts = split_seen_unseen(ds);
    std::map<Mode, ModeScores> scores;
    for (auto mode : all_modes()) {
        for (std::uint64_t seed = 0; seed < kOrderingSeeds; ++seed) {
            auto cfg = default_config(mode);
            cfg.seed = seed;
            const auto r = train(cfg, parts.train);
            scores[mode].unseen.push_back(unseen_knn_accuracy(r.params, ds));
            scores[mode].seen.push_back(seen_knn_accuracy(r.params, ds));
        }
    }
    const double secs = seconds_since(t0);
    std::size_t unseen_classes = 0;
    for (bool s : ds.class_seen)
        if (!s) ++unseen_classes;
    const double chance = 1.0 / static_cast<double>(unseen_classes);
    const double v = mean(scores[Mode::vispe].unseen);
    bool all_above_chance = true;
    std::string table;
    for (auto mode : all_modes()) {
        const double m = mean(scores[mode].unseen);
        all_above_chance = all_above_chance && m >= chance + kMarginOverChance;
        table += " " + to_string(mode) + "=" + fmt("%.3f", m);
    }
    const bool beats_mvspe = v > mean(scores[Mode::mvspe].unseen);
    const bool beats_instance = v >= mean(scores[Mode::instance].unseen) + kMarginOverInstance;
    report(5, beats_mvspe && beats_instance && all_above_chance && secs < kOrderingBudgetSeconds,
           "unseen knn" + table + "; vispe>mvspe " + (beats_mvspe ? "yes" : "no") + ", vispe>=instance+0.05 " +
               (beats_instance ? "yes" : "no") + ", all>=chance+0.20 " + (all_above_chance ? "yes" : "no") +
               fmt(" (chance %.3f)", chance) + fmt(", %.0fs", secs));
    return scores;
}

// 6. Threshold ablation direction (randomized prototypes without the consistency term).
void threshold_direction(const MultiviewDataset& ds) {
    const auto base = default_config(Mode::mvspe);
    const auto rows = ablate_threshold(ds, base, {0.0, 0.5, 1.0}, kThresholdSeeds);
    const bool ok = rows[1].mean >= rows[0].mean && rows[2].mean >= rows[0].mean;
    report(6, ok,
           "mean unseen knn t=0 " + fmt("%.3f", rows[0].mean) + ", t=0.5 " + fmt("%.3f", rows[1].mean) + ", t=1 " +
               fmt("%.3f", rows[2].mean) + " (" + std::to_string(kThresholdSeeds) + " seeds)");
}

// Epochs until unseen accuracy first reaches the given fraction of its final value.
std::size_t epochs_to_fraction(const TrainHistory& h, double fraction) {
    const double target = fraction * *h.back().unseen_knn;
    for (const auto& r : h)
        if (*r.unseen_knn >= target) return r.epoch;
    return h.back().epoch;
}

// 7. Convergence: vispe against triplet.
void convergence(const MultiviewDataset& ds) {
    const auto parts = split_seen_unseen(ds);
    const EpochHook hook = [&ds](const EmbedderParams& p, std::size_t) -> std::optional<double> {
        return unseen_knn_accuracy(p, ds);
    };
    std::vector<double> ev, et;
    for (std::uint64_t seed = 0; seed < kConvergenceSeeds; ++seed) {
        auto v = default_config(Mode::vispe);
        auto t = default_config(Mode::triplet);
        v.seed = t.seed = seed;
        ev.push_back(static_cast<double>(epochs_to_fraction(train(v, parts.train, hook).history, kConvergenceFraction)));
        et.push_back(static_cast<double>(epochs_to_fraction(train(t, parts.train, hook).history, kConvergenceFraction)));
    }
    report(7, mean(ev) < mean(et),
           "mean epochs to 95% of final unseen knn: vispe " + fmt("%.1f", mean(ev)) + ", triplet " +
               fmt("%.1f", mean(et)));
}

// 8. Supervised trade-off.
void supervised_tradeoff(const MultiviewDataset& ds, const std::map<Mode, ModeScores>& full) {
    const auto sub = subsample_training(ds, kFewObjects, kAll, 0);
    std::vector<double> v_unseen, s_unseen;
    for (std::uint64_t seed = 0; seed < kTradeoffSeeds; ++seed) {
        auto v = default_config(Mode::vispe);
        auto s = default_config(Mode::supervised);
        v.seed = s.seed = seed;
        v_unseen.push_back(train_and_score_unseen(v, sub));
        s_unseen.push_back(train_and_score_unseen(s, sub));
    }
    const double sup_seen = mean(full.at(Mode::supervised).seen);
    const double vispe_seen = mean(full.at(Mode::vispe).seen);
    const bool low_data = mean(v_unseen) > mean(s_unseen);
    const bool full_data = sup_seen > vispe_seen;
    report(8, low_data && full_data,
           std::to_string(kFewObjects) + " objects/class unseen knn: vispe " + fmt("%.3f", mean(v_unseen)) +
               " vs supervised " + fmt("%.3f", mean(s_unseen)) + "; full data seen knn: supervised " +
               fmt("%.3f", sup_seen) + " vs vispe " + fmt("%.3f", vispe_seen));
}

// 9. Determinism and persistence.
void determinism(const MultiviewDataset& ds) {
    testutil::TempDir dir("acceptance");
    const auto parts = split_seen_unseen(ds);
    bool ckpt_equal = true, resume_equal = true;
    for (auto mode : all_modes()) {
        auto cfg = default_config(mode);
        cfg.epochs = 6;
        auto a = start_training(cfg, parts.train);
        auto b = start_training(cfg, parts.train);
        run_epochs(a, parts.train, 3);
        run_epochs(b, parts.train, 3);
        checkpoint(a, dir / "a");
        checkpoint(b, dir / "b");
        for (const char* f : {"model.json", "weights.bin"})
            ckpt_equal = ckpt_equal && binio::read_text(dir / "a" / f) == binio::read_text(dir / "b" / f);
        auto r = resume(dir / "a", parts.train);
        run_epochs(r, parts.train, 6);
        run_epochs(b, parts.train, 6);
        resume_equal = resume_equal && r.params == b.params && r.bank == b.bank;
    }
    save(ds, dir / "data");
    const bool round_trip = load(dir / "data") == ds;
    report(9, ckpt_equal && resume_equal && round_trip,
           std::string("checkpoints byte-identical ") + (ckpt_equal ? "yes" : "no") + ", resume matches straight run " +
               (resume_equal ? "yes" : "no") + ", dataset round trip " + (round_trip ? "yes" : "no"));
}

}  // namespace

int main() {
    set_warnings_enabled(false);
    const auto t0 = Clock::now();
    const auto ds = generate(SyntheticSpec{});
    const auto train_ds = split_seen_unseen(ds).train;
    try {
        gradient_exactness();
        loss_algebra();
        mode_degeneracy(train_ds);
        metric_oracles();
        const auto scores = central_ordering(ds);
        threshold_direction(ds);
        convergence(ds);
        supervised_tradeoff(ds, scores);
        determinism(ds);
    } catch (const std::exception& e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 2;
    }
    std::printf("acceptance: %d failing criteria, %.0fs total\n", failures, seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
