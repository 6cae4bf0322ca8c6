#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "vispe/keyvalue.hpp"

namespace vispe {

// Parameters of the synthetic multiview generator. Each object is a latent
// point u near its class center; its views are noisy tanh images of
// [u; u sin(phi); u cos(phi)] for random, unrecorded-in-training angles phi.
struct SyntheticSpec {
    std::size_t n_classes = 20;
    std::size_t seen_classes = 12;
    std::size_t objects_per_class = 15;
    // The last `test_objects_per_class` objects of every class carry the test tag.
    std::size_t test_objects_per_class = 3;
    std::size_t views_min = 6;
    std::size_t views_max = 12;
    std::size_t latent_dim = 16;
    std::size_t obs_dim = 64;
    double class_scale = 1.0;
    double object_spread = 1.0;
    double view_noise = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const SyntheticSpec&) const = default;
};

SyntheticSpec load_synthetic_spec(const KeyValueFile& kv);

enum class Split : std::uint8_t { train, test };

struct ObjectRecord {
    std::size_t object_id = 0;
    std::size_t class_id = 0;
    Split split = Split::train;
    // Id of this object in the dataset it was carved out of (== object_id for
    // freshly generated data).
    std::size_t origin_id = 0;
    std::vector<std::vector<float>> views;
    // Generation metadata only. Nothing under trainer/ or protobank/ reads it.
    std::vector<double> view_angles;

    std::size_t view_count() const { return views.size(); }
    bool operator==(const ObjectRecord&) const = default;
};

// The fixed random map shared by every observation of a generated dataset.
struct GeneratorMap {
    std::size_t rows = 0;  // D
    std::size_t cols = 0;  // 3 * latent_dim
    std::vector<double> weights;  // row-major rows x cols
    std::vector<double> bias;

    bool operator==(const GeneratorMap&) const = default;
};

struct MultiviewDataset {
    std::size_t obs_dim = 0;
    std::vector<ObjectRecord> objects;
    // Indexed by class id; true for classes available to self-supervised training.
    std::vector<bool> class_seen;
    std::optional<SyntheticSpec> spec;
    std::optional<GeneratorMap> generator;

    std::size_t total_views() const;
    std::size_t class_count() const { return class_seen.size(); }
    std::set<std::size_t> seen_class_ids() const;
    // Throws FormatError when object ids are not 0..n-1 or dims are ragged.
    void check_invariants() const;
    bool operator==(const MultiviewDataset&) const = default;
};

MultiviewDataset generate(const SyntheticSpec& spec);

// One noiseless observation tanh(A [u; u sin(angle); u cos(angle)] + b).
std::vector<float> render_view(const GeneratorMap& map, std::span<const double> latent, double angle);

struct DatasetPartition {
    MultiviewDataset train;      // seen classes, train tag
    MultiviewDataset seen_test;  // seen classes, test tag
    MultiviewDataset unseen;     // every object of an unseen class
};

DatasetPartition split_seen_unseen(const MultiviewDataset& ds, const std::set<std::size_t>& seen_class_ids);
// Uses the dataset's own class tags.
DatasetPartition split_seen_unseen(const MultiviewDataset& ds);

inline constexpr std::size_t kAll = std::numeric_limits<std::size_t>::max();

// Uniform sampling without replacement of objects (per class) and views (per
// object). Requests beyond what is available are clamped with a warning.
MultiviewDataset subsample(const MultiviewDataset& ds, std::size_t objects_per_class,
                           std::size_t views_per_object, std::uint64_t seed);

void save(const MultiviewDataset& ds, const std::filesystem::path& dir);
MultiviewDataset load(const std::filesystem::path& dir);

inline constexpr int kDatasetFormatVersion = 1;

}  // namespace vispe
