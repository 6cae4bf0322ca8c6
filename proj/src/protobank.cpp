#include "vispe/protobank.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "vispe/errors.hpp"

namespace vispe {

namespace {

std::size_t draw_view(std::size_t view_count, Rng& rng) {
    std::uniform_int_distribution<std::size_t> dist(0, view_count - 1);
    return dist(rng);
}

// Uniform over [0, V) minus `excluded`; requires V >= 2.
std::size_t draw_view_except(std::size_t view_count, std::size_t excluded, Rng& rng) {
    std::uniform_int_distribution<std::size_t> dist(0, view_count - 2);
    const std::size_t v = dist(rng);
    return v >= excluded ? v + 1 : v;
}

}  // namespace

PrototypeBank init_bank(const MultiviewDataset& ds, double threshold, std::uint64_t seed) {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold t must lie in [0, 1]");
    PrototypeBank bank;
    bank.threshold = threshold;
    bank.rng = make_rng(seed, 0x62616e6bULL);
    bank.view_index.resize(ds.objects.size());
    for (std::size_t i = 0; i < ds.objects.size(); ++i) bank.view_index[i] = draw_view(ds.objects[i].view_count(), bank.rng);
    return bank;
}

std::size_t maybe_resample(PrototypeBank& bank, const MultiviewDataset& ds) {
    if (bank.view_index.size() != ds.objects.size()) throw ConfigError("prototype bank does not match dataset");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < ds.objects.size(); ++i) {
        const double u = unif(bank.rng);
        if (u < bank.threshold) {
            bank.view_index[i] = draw_view(ds.objects[i].view_count(), bank.rng);
            ++count;
        }
    }
    return count;
}

MinibatchPlan plan_for_instances(const MultiviewDataset& ds, const PrototypeBank& bank,
                                 std::vector<std::size_t> instance_ids, Rng& rng, const PlanOptions& opts) {
    MinibatchPlan plan;
    const std::size_t m = instance_ids.size();
    plan.anchor_views.resize(m);
    plan.proto_views_1.resize(m);
    plan.proto_views_2.resize(m);
    for (std::size_t b = 0; b < m; ++b) {
        const std::size_t id = instance_ids[b];
        if (id >= ds.objects.size()) throw ConfigError("instance id out of range");
        const std::size_t V = ds.objects[id].view_count();
        const std::size_t p1 = bank.view_index[id];
        plan.proto_views_1[b] = p1;
        if (opts.exclude_anchor_view && V >= 2) {
            plan.anchor_views[b] = draw_view_except(V, p1, rng);
        } else {
            plan.anchor_views[b] = draw_view(V, rng);
        }
        plan.proto_views_2[b] = V >= 2 ? draw_view_except(V, p1, rng) : p1;
    }
    plan.instance_ids = std::move(instance_ids);
    return plan;
}

MinibatchPlan sample_minibatch(const MultiviewDataset& ds, const PrototypeBank& bank, std::size_t m, Rng& rng,
                               const PlanOptions& opts) {
    const std::size_t n = ds.objects.size();
    if (m > n) {
        throw ConfigError("minibatch size " + std::to_string(m) + " exceeds the " + std::to_string(n) +
                          " training instances");
    }
    std::vector<std::size_t> ids(n);
    std::iota(ids.begin(), ids.end(), 0);
    for (std::size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(ids[i], ids[pick(rng)]);
    }
    ids.resize(m);
    return plan_for_instances(ds, bank, std::move(ids), rng, opts);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n_instances, std::size_t m, Rng& rng) {
    if (m == 0 || m > n_instances) throw ConfigError("minibatch size must be in [1, instance count]");
    std::vector<std::size_t> perm(n_instances);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t n_batches = (n_instances + m - 1) / m;
    std::vector<std::vector<std::size_t>> batches;
    batches.reserve(n_batches);
    for (std::size_t b = 0; b < n_batches; ++b) {
        const std::size_t begin = b * m;
        const std::size_t end = std::min(begin + m, n_instances);
        std::vector<std::size_t> batch(perm.begin() + static_cast<std::ptrdiff_t>(begin),
                                       perm.begin() + static_cast<std::ptrdiff_t>(end));
        if (batch.size() < m) {
            // top up from the instances already visited this epoch
            std::vector<std::size_t> pool(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(begin));
            const std::size_t need = m - batch.size();
            for (std::size_t i = 0; i < need; ++i) {
                std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
                std::swap(pool[i], pool[pick(rng)]);
                batch.push_back(pool[i]);
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

PrototypeSetEnumerator::PrototypeSetEnumerator(const MultiviewDataset& ds, std::vector<std::size_t> instance_subset,
                                               std::size_t cap)
    : instances_(std::move(instance_subset)) {
    count_ = instances_.empty() ? 0 : 1;
    for (auto id : instances_) {
        if (id >= ds.objects.size()) throw ConfigError("instance id out of range");
        const std::size_t V = ds.objects[id].view_count();
        radix_.push_back(V);
        if (count_ > cap / V) {
            throw ConfigError("prototype-set enumeration exceeds cap of " + std::to_string(cap) + " combinations");
        }
        count_ *= V;
    }
    if (count_ > cap) throw ConfigError("prototype-set enumeration exceeds cap of " + std::to_string(cap) + " combinations");
    current_.assign(instances_.size(), 0);
}

bool PrototypeSetEnumerator::next(std::vector<std::size_t>& combination) {
    if (emitted_ >= count_) return false;
    combination = current_;
    ++emitted_;
    for (std::size_t pos = current_.size(); pos-- > 0;) {
        if (++current_[pos] < radix_[pos]) break;
        current_[pos] = 0;
    }
    return true;
}

std::vector<std::vector<std::size_t>> enumerate_prototype_sets(const MultiviewDataset& ds,
                                                               const std::vector<std::size_t>& instance_subset,
                                                               std::size_t cap) {
    PrototypeSetEnumerator e(ds, instance_subset, cap);
    std::vector<std::vector<std::size_t>> out;
    out.reserve(e.count());
    std::vector<std::size_t> combo;
    while (e.next(combo)) out.push_back(combo);
    return out;
}

}  // namespace vispe
