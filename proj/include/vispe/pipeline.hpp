#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vispe/dataio.hpp"
#include "vispe/objective.hpp"
#include "vispe/trainer.hpp"

namespace vispe {

// A small random problem for checking analytic gradients of one mode. The
// batch holds spans into *ds, so the dataset lives behind a pointer.
struct GradcheckFixture {
    std::unique_ptr<MultiviewDataset> ds;
    EmbedderParams params;
    TrainingBatch batch;
    LossSettings settings;
};

// m instances drawn from a tiny generated dataset, parameters initialised
// and then jittered so that biases are nonzero.
GradcheckFixture make_gradcheck_fixture(Mode mode, std::uint64_t seed, std::size_t m = 4, const Arch& arch = Arch{});
GradCheckResult gradcheck_mode(Mode mode, std::uint64_t seed, const GradCheckOptions& opts, std::size_t m = 4);

// Train on the dataset's seen/train partition and return the unseen-class
// KNN accuracy. m is clamped to the number of training instances.
double train_and_score_unseen(const TrainConfig& cfg, const MultiviewDataset& ds);

struct ThresholdRow {
    double threshold = 0.0;
    std::vector<double> accuracies;  // one per seed
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
};

// Trains every (threshold, seed) pair, seeds base.seed .. base.seed + n_seeds - 1.
// Rows come back sorted by threshold.
std::vector<ThresholdRow> ablate_threshold(const MultiviewDataset& ds, const TrainConfig& base,
                                           std::vector<double> thresholds, std::size_t n_seeds);
std::string threshold_report_json(const std::vector<ThresholdRow>& rows, const TrainConfig& base, std::size_t n_seeds);

struct GridCell {
    std::size_t objects_per_class = 0;
    std::size_t views_per_object = 0;
    double accuracy = 0.0;
};

struct GridReport {
    std::vector<std::size_t> objects;
    std::vector<std::size_t> views;
    std::vector<GridCell> cells;  // row-major: objects outer, views inner
    // Share of adjacent pairs along each axis where accuracy does not drop.
    double objects_monotone_fraction = 0.0;
    double views_monotone_fraction = 0.0;

    const GridCell& at(std::size_t oi, std::size_t vi) const { return cells[oi * views.size() + vi]; }
};

// The seen training objects are subsampled (subsample_seed) per cell; the
// unseen evaluation objects are never subsampled.
MultiviewDataset subsample_training(const MultiviewDataset& ds, std::size_t objects_per_class,
                                    std::size_t views_per_object, std::uint64_t subsample_seed);
GridReport ablate_grid(const MultiviewDataset& ds, const TrainConfig& base, const std::vector<std::size_t>& objects,
                       const std::vector<std::size_t>& views, std::uint64_t subsample_seed);
std::string grid_report_json(const GridReport& report, const TrainConfig& base, std::uint64_t subsample_seed);

}  // namespace vispe
