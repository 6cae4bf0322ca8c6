#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "vispe/dataio.hpp"
#include "vispe/rng.hpp"

namespace vispe {

// View indices are 0-based throughout: object i's prototype view is
// view_index[i] in [0, V_i).
struct PrototypeBank {
    std::vector<std::size_t> view_index;
    double threshold = 0.5;
    Rng rng;

    bool operator==(const PrototypeBank&) const = default;
};

PrototypeBank init_bank(const MultiviewDataset& ds, double threshold, std::uint64_t seed);

// Randomization step: each instance independently redraws its prototype view
// with probability `threshold`. One uniform draw is consumed per instance
// regardless of the outcome. Returns how many instances were redrawn.
std::size_t maybe_resample(PrototypeBank& bank, const MultiviewDataset& ds);

struct MinibatchPlan {
    std::vector<std::size_t> instance_ids;
    std::vector<std::size_t> anchor_views;
    std::vector<std::size_t> proto_views_1;  // from the bank
    std::vector<std::size_t> proto_views_2;  // fresh, != proto_views_1 when V_i >= 2

    std::size_t size() const { return instance_ids.size(); }
};

struct PlanOptions {
    // Keep the anchor view off proto_views_1 when the object has >= 2 views.
    bool exclude_anchor_view = false;
};

// Plan for a given list of distinct instances.
MinibatchPlan plan_for_instances(const MultiviewDataset& ds, const PrototypeBank& bank,
                                 std::vector<std::size_t> instance_ids, Rng& rng, const PlanOptions& opts = {});

// m distinct instances drawn uniformly without replacement.
MinibatchPlan sample_minibatch(const MultiviewDataset& ds, const PrototypeBank& bank, std::size_t m, Rng& rng,
                               const PlanOptions& opts = {});

// Splits one epoch into ceil(N / m) groups of m distinct instances: a fresh
// permutation chunked in order, with the short final chunk topped up by
// instances from earlier chunks.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_instances, std::size_t m, Rng& rng);

// Iterates every prototype-set combination prod_i {0..V_i - 1} over the
// given instances in odometer order (last instance fastest).
class PrototypeSetEnumerator {
public:
    // Throws ConfigError when prod V_i exceeds `cap`.
    PrototypeSetEnumerator(const MultiviewDataset& ds, std::vector<std::size_t> instance_subset,
                           std::size_t cap = 10'000);

    std::size_t count() const { return count_; }
    const std::vector<std::size_t>& instances() const { return instances_; }
    // Writes the next combination (one view index per instance); false when exhausted.
    bool next(std::vector<std::size_t>& combination);

private:
    std::vector<std::size_t> instances_;
    std::vector<std::size_t> radix_;
    std::vector<std::size_t> current_;
    std::size_t count_ = 0;
    std::size_t emitted_ = 0;
};

std::vector<std::vector<std::size_t>> enumerate_prototype_sets(const MultiviewDataset& ds,
                                                               const std::vector<std::size_t>& instance_subset,
                                                               std::size_t cap = 10'000);

}  // namespace vispe
