#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vispe/dataio.hpp"
#include "vispe/embedder.hpp"
#include "vispe/keyvalue.hpp"
#include "vispe/objective.hpp"
#include "vispe/protobank.hpp"

namespace vispe {

enum class ResampleGranularity { epoch, iteration };

struct TrainConfig {
    Mode mode = Mode::vispe;
    double tau = 0.05;
    double alpha = 5.0;
    double threshold = 0.5;
    std::size_t batch_instances = 32;  // m
    double lr = 0.001;
    std::size_t epochs = 100;
    std::uint64_t seed = 0;
    bool stop_grad_protos = false;
    ResampleGranularity resample = ResampleGranularity::epoch;
    double margin = 1.0;
    bool symmetric_kl = false;
    bool exclude_anchor_view = false;
    std::vector<std::size_t> hidden_dims{128, 64};
    std::size_t embed_dim = 32;

    // Range checks only (tau > 0, t in [0,1], ...).
    void validate() const;
    // pe => t = 0 and alpha = 0; mvspe => alpha = 0; vispe => alpha > 0.
    void validate_mode_invariants() const;
    LossSettings loss_settings() const;
    bool operator==(const TrainConfig&) const = default;
};

// Defaults with the mode's forced values applied (pe: t = alpha = 0; mvspe: alpha = 0).
TrainConfig default_config(Mode mode);

// Parses a `key = value` training config. `mode_override` (e.g. from --mode)
// wins over a `mode` key. Mode invariants are enforced against the keys the
// file sets explicitly; unknown keys are rejected.
TrainConfig load_train_config(const KeyValueFile& kv, std::optional<Mode> mode_override = std::nullopt);
std::string config_to_text(const TrainConfig& cfg);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double mean_loss = 0.0;  // per example
    double mean_kl = 0.0;
    std::size_t resampled = 0;
    double wall_seconds = 0.0;
    std::optional<double> unseen_knn;
};

using TrainHistory = std::vector<EpochRecord>;

// Called after every epoch; a returned value is stored as that epoch's unseen_knn.
using EpochHook = std::function<std::optional<double>(const EmbedderParams&, std::size_t epoch)>;

struct TrainerState {
    TrainConfig config;
    EmbedderParams params;
    PrototypeBank bank;
    Rng sampler;
    std::size_t epoch = 0;  // completed epochs
    std::size_t n_instances = 0;
    std::vector<std::size_t> class_ids;  // supervised head rows
    TrainHistory history;
};

// Fresh state for `train_ds`, whose objects are all training instances.
TrainerState start_training(const TrainConfig& cfg, const MultiviewDataset& train_ds);
void run_epochs(TrainerState& state, const MultiviewDataset& train_ds, std::size_t until_epoch,
                const EpochHook& hook = {});

struct TrainResult {
    EmbedderParams params;
    TrainHistory history;
};

TrainResult train(const TrainConfig& cfg, const MultiviewDataset& train_ds, const EpochHook& hook = {});

// theta <- theta - lr * grad; no momentum, no weight decay.
void sgd_step(std::vector<double>& theta, std::span<const double> grad, double lr);
void sgd_step(EmbedderParams& params, std::span<const double> grad, double lr);

inline constexpr int kCheckpointFormatVersion = 1;

// Writes model.json, weights.bin and history.json into `dir`.
void checkpoint(const TrainerState& state, const std::filesystem::path& dir);
// Throws ConfigError when the checkpoint does not fit `train_ds`.
TrainerState resume(const std::filesystem::path& dir, const MultiviewDataset& train_ds);

struct LoadedModel {
    EmbedderParams params;
    TrainConfig config;
    std::size_t epoch = 0;
};
LoadedModel load_model(const std::filesystem::path& dir);

std::string history_to_json(const TrainHistory& history);

}  // namespace vispe
