#include "vispe/evalsuite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "vispe/errors.hpp"
#include "vispe/keyvalue.hpp"
#include "vispe/rng.hpp"

namespace vispe {

using nlohmann::json;

void EmbeddedSet::push_back(std::vector<double> v, std::size_t object_id, std::size_t class_id, Split split) {
    vectors.push_back(std::move(v));
    object_ids.push_back(object_id);
    class_ids.push_back(class_id);
    splits.push_back(split);
}

EmbeddedSet EmbeddedSet::filter(Split split) const {
    EmbeddedSet out;
    for (std::size_t i = 0; i < size(); ++i)
        if (splits[i] == split) out.push_back(vectors[i], object_ids[i], class_ids[i], splits[i]);
    return out;
}

EmbeddedSet embed_dataset(const EmbedderParams& params, const MultiviewDataset& ds) {
    EmbeddedSet set;
    for (const auto& o : ds.objects)
        for (const auto& v : o.views) set.push_back(embed(params, std::span<const float>(v)), o.object_id, o.class_id, o.split);
    return set;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

std::size_t knn_k_rule(const EmbeddedSet& reference) {
    std::map<std::size_t, std::set<std::size_t>> objects;
    std::map<std::size_t, std::size_t> images;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        objects[reference.class_ids[i]].insert(reference.object_ids[i]);
        ++images[reference.class_ids[i]];
    }
    if (objects.empty()) throw ConfigError("reference set is empty");
    std::size_t fewest = std::numeric_limits<std::size_t>::max();
    for (const auto& [c, objs] : objects) fewest = std::min(fewest, objs.size());
    std::size_t k = std::numeric_limits<std::size_t>::max();
    for (const auto& [c, objs] : objects)
        if (objs.size() == fewest) k = std::min(k, images[c]);
    return k;
}

KnnResult knn_classify(const EmbeddedSet& reference, const EmbeddedSet& queries, std::optional<std::size_t> k) {
    if (reference.size() == 0) throw ConfigError("knn: reference set is empty");
    KnnResult res;
    res.k = k ? *k : knn_k_rule(reference);
    if (res.k < 1) throw ConfigError("knn: k must be >= 1");
    if (res.k > reference.size()) {
        throw ConfigError("knn: k = " + std::to_string(res.k) + " exceeds reference size " +
                          std::to_string(reference.size()));
    }
    const std::size_t n = reference.size();
    std::vector<std::pair<double, std::size_t>> dist(n);
    std::size_t correct = 0;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        for (std::size_t r = 0; r < n; ++r) dist[r] = {squared_distance(queries.vectors[q], reference.vectors[r]), r};
        std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(res.k - 1), dist.end());
        std::map<std::size_t, std::pair<std::size_t, double>> votes;  // class -> (count, summed distance)
        for (std::size_t i = 0; i < res.k; ++i) {
            auto& v = votes[reference.class_ids[dist[i].second]];
            ++v.first;
            v.second += std::sqrt(dist[i].first);
        }
        std::size_t best = 0;
        std::size_t best_count = 0;
        double best_sum = 0.0;
        bool first = true;
        for (const auto& [c, v] : votes) {  // ascending class id
            if (first || v.first > best_count || (v.first == best_count && v.second < best_sum)) {
                best = c;
                best_count = v.first;
                best_sum = v.second;
                first = false;
            }
        }
        res.predictions.push_back(best);
        if (best == queries.class_ids[q]) ++correct;
    }
    res.accuracy = queries.size() ? static_cast<double>(correct) / static_cast<double>(queries.size()) : 0.0;
    return res;
}

std::map<std::size_t, double> recall_at_k(const EmbeddedSet& set, const std::vector<std::size_t>& ks) {
    if (ks.empty()) return {};
    const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
    if (set.size() < kmax + 1) {
        throw ConfigError("recall@K needs at least " + std::to_string(kmax + 1) + " items, set has " +
                          std::to_string(set.size()));
    }
    const std::size_t n = set.size();
    // rank (1-based, among other items ordered by distance then index) of the
    // nearest same-class item; n when there is none
    std::vector<std::size_t> first_hit(n, n);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t hit = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            d[j] = squared_distance(set.vectors[i], set.vectors[j]);
            if (set.class_ids[j] == set.class_ids[i] && (hit == n || d[j] < d[hit])) hit = j;
        }
        if (hit == n) continue;
        std::size_t ahead = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i || j == hit) continue;
            if (d[j] < d[hit] || (d[j] == d[hit] && j < hit)) ++ahead;
        }
        first_hit[i] = ahead + 1;
    }
    std::map<std::size_t, double> out;
    for (auto K : ks) {
        std::size_t ok = 0;
        for (auto r : first_hit)
            if (r <= K) ++ok;
        out[K] = static_cast<double>(ok) / static_cast<double>(n);
    }
    return out;
}

namespace {

struct LloydRun {
    std::vector<std::size_t> assign;
    std::vector<std::vector<double>> centroids;
    double inertia = 0.0;
    std::size_t iterations = 0;
    std::vector<double> trace;
};

std::vector<std::vector<double>> kmeanspp(const std::vector<std::vector<double>>& pts, std::size_t k, Rng& rng) {
    const std::size_t n = pts.size();
    std::vector<std::vector<double>> c;
    std::vector<bool> chosen(n, false);
    std::uniform_int_distribution<std::size_t> first(0, n - 1);
    std::size_t idx = first(rng);
    c.push_back(pts[idx]);
    chosen[idx] = true;
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(pts[i], c[0]);
    while (c.size() < k) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        if (total > 0) {
            std::uniform_real_distribution<double> u(0.0, total);
            const double target = u(rng);
            double acc = 0.0;
            idx = n;
            for (std::size_t i = 0; i < n; ++i) {
                if (d2[i] == 0.0) continue;
                acc += d2[i];
                idx = i;
                if (acc >= target) break;
            }
        } else {
            std::vector<std::size_t> rest;
            for (std::size_t i = 0; i < n; ++i)
                if (!chosen[i]) rest.push_back(i);
            std::uniform_int_distribution<std::size_t> pick(0, rest.size() - 1);
            idx = rest[pick(rng)];
        }
        chosen[idx] = true;
        c.push_back(pts[idx]);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], squared_distance(pts[i], c.back()));
    }
    return c;
}

// Assigns every point to its nearest centroid, repairs empty clusters by
// moving the farthest point into them, and returns the inertia.
double assign_points(const std::vector<std::vector<double>>& pts, std::vector<std::vector<double>>& c,
                     std::vector<std::size_t>& assign) {
    const std::size_t n = pts.size();
    const std::size_t k = c.size();
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double bd = squared_distance(pts[i], c[0]);
        for (std::size_t j = 1; j < k; ++j) {
            const double d = squared_distance(pts[i], c[j]);
            if (d < bd) {
                bd = d;
                best = j;
            }
        }
        assign[i] = best;
        dist[i] = bd;
    }
    std::vector<std::size_t> sizes(k, 0);
    for (auto a : assign) ++sizes[a];
    for (std::size_t j = 0; j < k; ++j) {
        if (sizes[j] != 0) continue;
        std::size_t far = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (sizes[assign[i]] < 2) continue;
            if (far == n || dist[i] > dist[far]) far = i;
        }
        if (far == n) break;
        --sizes[assign[far]];
        assign[far] = j;
        ++sizes[j];
        c[j] = pts[far];
        dist[far] = 0.0;
    }
    return std::accumulate(dist.begin(), dist.end(), 0.0);
}

// Single-point transfers between clusters, applied while any of them lowers the
// inertia once both centroids move. Lloyd fixed points that survive this are a
// strict subset, which removes most of the poor local minima on small sets.
// Centroids end as the exact cluster means; returns the final inertia.
double hartigan_refine(const std::vector<std::vector<double>>& pts, std::vector<std::vector<double>>& c,
                       std::vector<std::size_t>& assign) {
    const std::size_t n = pts.size();
    const std::size_t k = c.size();
    const std::size_t dim = pts[0].size();
    std::vector<std::size_t> counts(k, 0);
    for (auto& v : c) std::fill(v.begin(), v.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        ++counts[assign[i]];
        for (std::size_t d = 0; d < dim; ++d) c[assign[i]][d] += pts[i][d];
    }
    for (std::size_t j = 0; j < k; ++j)
        for (auto& v : c[j]) v /= static_cast<double>(counts[j]);

    for (std::size_t pass = 0; pass < 100 * n; ++pass) {
        bool moved = false;
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t a = assign[i];
            if (counts[a] < 2) continue;
            const double na = static_cast<double>(counts[a]);
            const double removal = na / (na - 1.0) * squared_distance(pts[i], c[a]);
            std::size_t best = a;
            double best_delta = -1e-12 * (1.0 + removal);
            for (std::size_t b = 0; b < k; ++b) {
                if (b == a) continue;
                const double nb = static_cast<double>(counts[b]);
                const double delta = nb / (nb + 1.0) * squared_distance(pts[i], c[b]) - removal;
                if (delta < best_delta) {
                    best_delta = delta;
                    best = b;
                }
            }
            if (best == a) continue;
            const double nb = static_cast<double>(counts[best]);
            for (std::size_t d = 0; d < dim; ++d) {
                c[a][d] = (c[a][d] * na - pts[i][d]) / (na - 1.0);
                c[best][d] = (c[best][d] * nb + pts[i][d]) / (nb + 1.0);
            }
            --counts[a];
            ++counts[best];
            assign[i] = best;
            moved = true;
        }
        if (!moved) break;
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) inertia += squared_distance(pts[i], c[assign[i]]);
    return inertia;
}

LloydRun lloyd(const std::vector<std::vector<double>>& pts, std::size_t k, Rng& rng, const KMeansOptions& opts) {
    const std::size_t n = pts.size();
    const std::size_t dim = pts[0].size();
    LloydRun run;
    run.centroids = kmeanspp(pts, k, rng);
    run.assign.assign(n, 0);
    for (std::size_t it = 0; it < opts.max_iterations; ++it) {
        run.trace.push_back(assign_points(pts, run.centroids, run.assign));
        ++run.iterations;
        std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
        std::vector<std::size_t> counts(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++counts[run.assign[i]];
            for (std::size_t d = 0; d < dim; ++d) next[run.assign[i]][d] += pts[i][d];
        }
        double shift = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) {
                next[j] = run.centroids[j];
                continue;
            }
            for (auto& v : next[j]) v /= static_cast<double>(counts[j]);
            shift = std::max(shift, std::sqrt(squared_distance(next[j], run.centroids[j])));
        }
        run.centroids = std::move(next);
        if (shift < opts.tolerance) break;
    }
    run.trace.push_back(assign_points(pts, run.centroids, run.assign));
    run.inertia = hartigan_refine(pts, run.centroids, run.assign);
    run.trace.push_back(run.inertia);
    return run;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, std::size_t n_clusters, std::uint64_t seed,
                    const KMeansOptions& opts) {
    if (n_clusters == 0 || n_clusters > points.size()) throw ConfigError("kmeans: need 1 <= n_clusters <= |set|");
    std::optional<LloydRun> best;
    const std::size_t restarts = std::max<std::size_t>(opts.restarts, 1);
    for (std::size_t r = 0; r < restarts; ++r) {
        Rng rng = make_rng(seed, 0x6b6d0000ULL + r);
        auto run = lloyd(points, n_clusters, rng, opts);
        if (!best || run.inertia < best->inertia) best = std::move(run);
    }
    return {std::move(best->assign), std::move(best->centroids), best->inertia, best->iterations,
            std::move(best->trace)};
}

double nmi(const std::vector<std::size_t>& assignments, const std::vector<std::size_t>& labels) {
    if (assignments.size() != labels.size()) throw ConfigError("nmi: partitions have different lengths");
    const std::size_t n = assignments.size();
    if (n == 0) return 1.0;
    std::map<std::size_t, std::size_t> a_to_c, c_to_a;
    bool identical = true;
    for (std::size_t i = 0; i < n && identical; ++i) {
        auto [ia, inserted_a] = a_to_c.emplace(assignments[i], labels[i]);
        auto [ic, inserted_c] = c_to_a.emplace(labels[i], assignments[i]);
        if (ia->second != labels[i] || ic->second != assignments[i]) identical = false;
    }
    if (identical) return 1.0;

    std::map<std::pair<std::size_t, std::size_t>, double> joint;
    std::map<std::size_t, double> pa, pc;
    for (std::size_t i = 0; i < n; ++i) {
        joint[{assignments[i], labels[i]}] += 1.0;
        pa[assignments[i]] += 1.0;
        pc[labels[i]] += 1.0;
    }
    const double N = static_cast<double>(n);
    auto entropy = [N](const std::map<std::size_t, double>& counts) {
        double h = 0.0;
        for (const auto& [key, c] : counts) h -= (c / N) * std::log(c / N);
        return h;
    };
    const double ha = entropy(pa);
    const double hc = entropy(pc);
    double mi = 0.0;
    for (const auto& [key, c] : joint) mi += (c / N) * std::log(c * N / (pa[key.first] * pc[key.second]));
    if (ha + hc <= 0.0) return 0.0;
    return std::clamp(2.0 * mi / (ha + hc), 0.0, 1.0);
}

double few_shot_eval(const EmbeddedSet& set, std::size_t k_shots, std::uint64_t seed, const FewShotOptions& opts) {
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < set.size(); ++i) by_class[set.class_ids[i]].push_back(i);
    if (by_class.size() < 2) {
        log_warning("few-shot probe on a single class is trivial; reporting accuracy 1");
        return 1.0;
    }
    if (k_shots == 0) throw ConfigError("few-shot: k_shots must be >= 1");
    for (const auto& [c, items] : by_class) {
        if (items.size() <= k_shots) {
            throw ConfigError("few-shot: class " + std::to_string(c) + " has " + std::to_string(items.size()) +
                              " items, need more than " + std::to_string(k_shots));
        }
    }
    std::vector<std::size_t> classes;
    for (const auto& [c, items] : by_class) classes.push_back(c);
    const std::size_t dim = set.vectors[0].size();
    const std::size_t C = classes.size();

    double acc_sum = 0.0;
    for (std::size_t trial = 0; trial < opts.trials; ++trial) {
        Rng rng = make_rng(seed, 0x66730000ULL + trial);
        std::vector<std::size_t> train, test;
        std::vector<std::size_t> train_label;
        for (std::size_t ci = 0; ci < C; ++ci) {
            auto items = by_class[classes[ci]];
            std::shuffle(items.begin(), items.end(), rng);
            for (std::size_t i = 0; i < items.size(); ++i) {
                if (i < k_shots) {
                    train.push_back(items[i]);
                    train_label.push_back(ci);
                } else {
                    test.push_back(items[i]);
                }
            }
        }
        const double n = static_cast<double>(train.size());
        std::vector<std::vector<double>> w(C, std::vector<double>(dim, 0.0));
        std::vector<double> b(C, 0.0);
        for (std::size_t ci = 0; ci < C; ++ci) {
            std::vector<double> gw(dim);
            for (std::size_t step = 1; step <= opts.steps; ++step) {
                const double lr = opts.lr0 / std::sqrt(static_cast<double>(step));
                for (std::size_t d = 0; d < dim; ++d) gw[d] = opts.lambda * w[ci][d];
                double gb = 0.0;
                for (std::size_t t = 0; t < train.size(); ++t) {
                    const auto& x = set.vectors[train[t]];
                    const double y = train_label[t] == ci ? 1.0 : -1.0;
                    double score = b[ci];
                    for (std::size_t d = 0; d < dim; ++d) score += w[ci][d] * x[d];
                    if (y * score < 1.0) {
                        for (std::size_t d = 0; d < dim; ++d) gw[d] -= y * x[d] / n;
                        gb -= y / n;
                    }
                }
                for (std::size_t d = 0; d < dim; ++d) w[ci][d] -= lr * gw[d];
                b[ci] -= lr * gb;
            }
        }
        std::size_t correct = 0;
        for (auto idx : test) {
            const auto& x = set.vectors[idx];
            std::size_t best = 0;
            double best_score = -std::numeric_limits<double>::infinity();
            for (std::size_t ci = 0; ci < C; ++ci) {
                double s = b[ci];
                for (std::size_t d = 0; d < dim; ++d) s += w[ci][d] * x[d];
                if (s > best_score) {
                    best_score = s;
                    best = ci;
                }
            }
            if (classes[best] == set.class_ids[idx]) ++correct;
        }
        acc_sum += static_cast<double>(correct) / static_cast<double>(test.size());
    }
    return acc_sum / static_cast<double>(opts.trials);
}

double unseen_knn_accuracy(const EmbedderParams& params, const MultiviewDataset& ds, std::optional<std::size_t> k) {
    const auto parts = split_seen_unseen(ds);
    const auto unseen = embed_dataset(params, parts.unseen);
    return knn_classify(unseen.filter(Split::train), unseen.filter(Split::test), k).accuracy;
}

double seen_knn_accuracy(const EmbedderParams& params, const MultiviewDataset& ds, std::optional<std::size_t> k) {
    const auto parts = split_seen_unseen(ds);
    return knn_classify(embed_dataset(params, parts.train), embed_dataset(params, parts.seen_test), k).accuracy;
}

EvalReport evaluate(const EmbedderParams& params, const MultiviewDataset& ds, const std::string& split,
                    const EvalOptions& opts) {
    if (split != "seen" && split != "unseen") throw ConfigError("split must be `seen` or `unseen`");
    if (params.arch.input_dim != ds.obs_dim) {
        throw ConfigError("model expects observation dimension " + std::to_string(params.arch.input_dim) +
                          ", dataset has " + std::to_string(ds.obs_dim));
    }
    const auto parts = split_seen_unseen(ds);
    const auto train = embed_dataset(params, parts.train);
    const auto seen_test = embed_dataset(params, parts.seen_test);
    const auto unseen = embed_dataset(params, parts.unseen);

    EvalReport r;
    r.split = split;
    r.options = opts;
    const auto seen_knn = knn_classify(train, seen_test, opts.k_override);
    const auto unseen_knn = knn_classify(unseen.filter(Split::train), unseen.filter(Split::test), opts.k_override);
    r.knn_accuracy_seen = seen_knn.accuracy;
    r.knn_accuracy_unseen = unseen_knn.accuracy;
    r.k_used_seen = seen_knn.k;
    r.k_used_unseen = unseen_knn.k;
    r.k_used = split == "seen" ? seen_knn.k : unseen_knn.k;

    const EmbeddedSet& target = split == "seen" ? seen_test : unseen;
    r.recall_at = recall_at_k(target, opts.recall_ks);
    const std::set<std::size_t> classes(target.class_ids.begin(), target.class_ids.end());
    const auto km = kmeans(target.vectors, classes.size(), opts.seed);
    r.nmi = nmi(km.assignments, target.class_ids);
    for (auto k : opts.shots) r.few_shot[k] = few_shot_eval(target, k, opts.seed, opts.few_shot);
    return r;
}

std::string report_to_json(const EvalReport& r, const std::string& config_echo) {
    json j;
    j["split"] = r.split;
    j["knn_accuracy_seen"] = r.knn_accuracy_seen;
    j["knn_accuracy_unseen"] = r.knn_accuracy_unseen;
    j["k_used"] = r.k_used;
    j["k_used_seen"] = r.k_used_seen;
    j["k_used_unseen"] = r.k_used_unseen;
    json recall = json::object();
    for (const auto& [k, v] : r.recall_at) recall[std::to_string(k)] = v;
    j["recall_at"] = recall;
    j["nmi"] = r.nmi;
    json fs = json::object();
    for (const auto& [k, v] : r.few_shot) fs[std::to_string(k)] = v;
    j["few_shot"] = fs;
    j["eval_options"] = {{"k_override", r.options.k_override ? json(*r.options.k_override) : json(nullptr)},
                         {"recall_ks", r.options.recall_ks},
                         {"shots", r.options.shots},
                         {"few_shot_trials", r.options.few_shot.trials},
                         {"svm_lambda", r.options.few_shot.lambda},
                         {"svm_steps", r.options.few_shot.steps},
                         {"svm_lr0", r.options.few_shot.lr0},
                         {"kmeans_restarts", KMeansOptions{}.restarts},
                         {"seed", r.options.seed}};
    if (!config_echo.empty()) {
        json cfg = json::object();
        const auto parsed = KeyValueFile::parse(config_echo, "config");
        for (const auto& [k, v] : parsed.entries()) cfg[k] = v;
        j["config"] = cfg;
    }
    return j.dump(1) + "\n";
}

MultiviewDataset embeddings_as_dataset(const EmbedderParams& params, const MultiviewDataset& ds) {
    MultiviewDataset out;
    out.obs_dim = params.arch.embed_dim;
    out.class_seen = ds.class_seen;
    for (const auto& o : ds.objects) {
        ObjectRecord e;
        e.object_id = o.object_id;
        e.class_id = o.class_id;
        e.split = o.split;
        e.origin_id = o.origin_id;
        e.view_angles = o.view_angles;
        for (const auto& v : o.views) {
            const auto z = embed(params, std::span<const float>(v));
            e.views.emplace_back(z.begin(), z.end());
        }
        out.objects.push_back(std::move(e));
    }
    return out;
}

void export_embeddings(const EmbedderParams& params, const MultiviewDataset& ds, const std::filesystem::path& dir) {
    save(embeddings_as_dataset(params, ds), dir);
}

}  // namespace vispe
