#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vispe/dataio.hpp"
#include "vispe/embedder.hpp"
#include "vispe/losses.hpp"
#include "vispe/protobank.hpp"

namespace vispe {

enum class Mode { instance, pe, mvspe, vispe, triplet, supervised };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);  // throws ConfigError
bool uses_prototypes(Mode mode);           // pe, mvspe, vispe
const std::vector<Mode>& all_modes();

struct LossSettings {
    Mode mode = Mode::vispe;
    PrototypeLossOptions proto;
    double margin = 1.0;
    bool stop_grad_protos = false;
    // Supervised mode: class id of every head row.
    std::vector<std::size_t> class_ids;
};

// Observation vectors (views into a dataset) for one SGD step.
struct TrainingBatch {
    std::vector<std::span<const float>> anchors;
    // Prototype modes: position of the anchor's instance in the batch.
    // Instance mode: instance id. Supervised mode: class id.
    std::vector<std::size_t> targets;
    std::vector<std::span<const float>> protos_1;
    std::vector<std::span<const float>> protos_2;
    std::vector<std::span<const float>> positives;
    std::vector<std::span<const float>> negatives;
};

// Resolves a plan against the dataset. Triplet mode draws its positives
// (another view of the anchor object) and negatives (a view of a uniformly
// drawn other instance) from `rng`; other modes do not touch it.
TrainingBatch build_batch(Mode mode, const MultiviewDataset& ds, const MinibatchPlan& plan, Rng& rng);

// Loss summed over the batch, with its gradient with respect to every
// coordinate of theta (network and head).
struct BatchLoss {
    double total = 0.0;
    double l_s1 = 0.0;
    double l_s2 = 0.0;
    double l_kl = 0.0;
    std::size_t examples = 0;
    std::vector<double> grad;
};

// Throws NumericError naming the offending term when any loss term is non-finite.
BatchLoss loss_and_grads(const EmbedderParams& params, const TrainingBatch& batch, const LossSettings& settings,
                         bool want_grad = true);

// Objective for gradient checking: returns the loss and, if the pointer is
// non-null, writes the analytic gradient.
using Objective = std::function<double(std::span<const double> theta, std::vector<double>* grad)>;

struct GradCheckOptions {
    double eps = 1e-5;
    // Coordinates sampled without replacement; all of them when >= dimension.
    std::size_t coordinates = 200;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_coordinate = 0;
    std::size_t coordinates_checked = 0;
};

// max over sampled coordinates of |analytic - central| / max(|analytic|, |central|, 1e-8)
GradCheckResult check_gradient(const Objective& objective, std::span<const double> theta, const GradCheckOptions& opts);

GradCheckResult gradient_check(const EmbedderParams& params, const TrainingBatch& batch, const LossSettings& settings,
                               const GradCheckOptions& opts);

}  // namespace vispe
