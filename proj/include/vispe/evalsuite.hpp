#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vispe/dataio.hpp"
#include "vispe/embedder.hpp"

namespace vispe {

// Parallel arrays, one row per embedded view.
struct EmbeddedSet {
    std::vector<std::vector<double>> vectors;
    std::vector<std::size_t> object_ids;
    std::vector<std::size_t> class_ids;
    std::vector<Split> splits;

    std::size_t size() const { return vectors.size(); }
    void push_back(std::vector<double> v, std::size_t object_id, std::size_t class_id, Split split);
    EmbeddedSet filter(Split split) const;
};

EmbeddedSet embed_dataset(const EmbedderParams& params, const MultiviewDataset& ds);

double squared_distance(const std::vector<double>& a, const std::vector<double>& b);

// Number of reference images of the class with the fewest objects (ties on
// object count resolved to the smallest image count).
std::size_t knn_k_rule(const EmbeddedSet& reference);

struct ReferenceK {
    const char* benchmark;
    std::size_t k;
};
// k from the same rule on the rendered-CAD benchmarks. Kept for reference;
// the synthetic data never reaches these sizes.
inline constexpr ReferenceK kReferenceKnnK[] = {{"ModelNet", 960}, {"ShapeNet", 468}, {"ModelNet-S", 500}};

struct KnnResult {
    std::vector<std::size_t> predictions;
    double accuracy = 0.0;
    std::size_t k = 0;
};

// Majority vote over the k nearest references (Euclidean on unit vectors,
// distance ties by reference index). Vote ties go to the smaller summed
// distance, then the smaller class id. k defaults to knn_k_rule(reference).
KnnResult knn_classify(const EmbeddedSet& reference, const EmbeddedSet& queries,
                       std::optional<std::size_t> k = std::nullopt);

// Fraction of items whose K nearest other items include one of the same class.
std::map<std::size_t, double> recall_at_k(const EmbeddedSet& set, const std::vector<std::size_t>& ks = {1, 2, 4, 8});

struct KMeansOptions {
    std::size_t max_iterations = 300;
    double tolerance = 1e-6;  // max centroid shift
    std::size_t restarts = 50;  // best inertia kept
};

struct KMeansResult {
    std::vector<std::size_t> assignments;
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;
    std::size_t iterations = 0;
    std::vector<double> inertia_trace;  // per Lloyd iteration of the kept restart
};

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t n_clusters, std::uint64_t seed,
                    const KMeansOptions& opts = {});

// 2 I(A; C) / (H(A) + H(C)) in nats.
double nmi(const std::vector<std::size_t>& assignments, const std::vector<std::size_t>& labels);

struct FewShotOptions {
    std::size_t trials = 10;
    double lambda = 1e-3;
    std::size_t steps = 1000;
    double lr0 = 0.1;  // step size lr0 / sqrt(step)
};

// Mean held-out accuracy of a one-vs-rest linear max-margin probe trained on
// k_shots labelled items per class.
double few_shot_eval(const EmbeddedSet& set, std::size_t k_shots, std::uint64_t seed, const FewShotOptions& opts = {});

struct EvalOptions {
    std::optional<std::size_t> k_override;
    std::vector<std::size_t> recall_ks{1, 2, 4, 8};
    std::vector<std::size_t> shots{1, 3, 5};
    FewShotOptions few_shot;
    std::uint64_t seed = 0;
};

struct EvalReport {
    std::string split;  // "seen" or "unseen"
    double knn_accuracy_seen = 0.0;
    double knn_accuracy_unseen = 0.0;
    std::size_t k_used_seen = 0;
    std::size_t k_used_unseen = 0;
    std::size_t k_used = 0;  // for `split`
    std::map<std::size_t, double> recall_at;
    double nmi = 0.0;
    std::map<std::size_t, double> few_shot;
    EvalOptions options;
};

// KNN for seen classes uses the training partition as reference and the
// seen test objects as queries; for unseen classes, train-tagged unseen
// objects are the reference and test-tagged ones the queries. Retrieval,
// clustering and few-shot metrics run on the chosen split's evaluation set
// (seen test objects, or every unseen object).
EvalReport evaluate(const EmbedderParams& params, const MultiviewDataset& ds, const std::string& split,
                    const EvalOptions& opts = {});

// KNN accuracy on unseen classes only; cheap enough for per-epoch hooks.
double unseen_knn_accuracy(const EmbedderParams& params, const MultiviewDataset& ds,
                           std::optional<std::size_t> k = std::nullopt);
double seen_knn_accuracy(const EmbedderParams& params, const MultiviewDataset& ds,
                         std::optional<std::size_t> k = std::nullopt);

std::string report_to_json(const EvalReport& report, const std::string& config_echo = {});

// Embeddings of every view of `ds`, stored as a dataset directory (manifest
// + little-endian float32 blob) with D = embedding dimension.
MultiviewDataset embeddings_as_dataset(const EmbedderParams& params, const MultiviewDataset& ds);
void export_embeddings(const EmbedderParams& params, const MultiviewDataset& ds, const std::filesystem::path& dir);

}  // namespace vispe
