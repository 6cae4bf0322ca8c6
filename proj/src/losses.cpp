#include "vispe/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "vispe/errors.hpp"

namespace vispe {

namespace {

constexpr double kUnitTolerance = 1e-6;

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

void require_unit(std::span<const double> v, const char* what) {
    const double n = std::sqrt(dot(v, v));
    if (!(std::abs(n - 1.0) <= kUnitTolerance)) {
        throw NumericError(std::string(what) + " is not unit norm (|v| = " + std::to_string(n) + ")");
    }
}

Posterior posterior_from_logits(Vec logits, PrototypeSetId id, double tau) {
    Posterior p;
    p.set_id = id;
    p.tau = tau;
    const double lse = log_sum_exp(logits);
    p.log_probs.resize(logits.size());
    p.probs.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p.log_probs[i] = logits[i] - lse;
        p.probs[i] = std::exp(p.log_probs[i]);
    }
    p.logits = std::move(logits);
    return p;
}

}  // namespace

double log_sum_exp(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - mx);
    return mx + std::log(s);
}

Posterior prototype_posterior(std::span<const double> anchor, const VecList& protos, double tau, PrototypeSetId id) {
    if (!(tau > 0)) throw ConfigError("temperature must be positive");
    if (protos.empty()) throw ConfigError("prototype set is empty");
    require_unit(anchor, "anchor embedding");
    Vec logits(protos.size());
    for (std::size_t k = 0; k < protos.size(); ++k) {
        if (protos[k].size() != anchor.size()) throw ConfigError("prototype and anchor dimensions differ");
        require_unit(protos[k], "prototype embedding");
        logits[k] = dot(protos[k], anchor) / tau;
    }
    return posterior_from_logits(std::move(logits), id, tau);
}

double proto_ce_loss(const Posterior& posterior, std::size_t target) {
    if (target >= posterior.size()) throw ConfigError("target index out of range");
    return -posterior.log_probs[target];
}

double kl_div(const Posterior& p, const Posterior& q) {
    if (p.size() != q.size()) throw ConfigError("KL between posteriors of different length");
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p.probs[k] == 0.0) continue;
        kl += p.probs[k] * (p.log_probs[k] - q.log_probs[k]);
    }
    // rounding can leave a -1e-17 residue
    return std::max(kl, 0.0);
}

void PrototypeLossGrad::reset(std::size_t m, std::size_t k) {
    anchor.assign(k, 0.0);
    protos_1.assign(m, Vec(k, 0.0));
    protos_2.assign(m, Vec(k, 0.0));
}

LossBreakdown total_loss(std::span<const double> anchor, const VecList& protos_1, const VecList& protos_2,
                         std::size_t target, const PrototypeLossOptions& opts, PrototypeLossGrad* grad) {
    if (protos_1.size() != protos_2.size()) throw ConfigError("prototype sets differ in size");
    const auto p1 = prototype_posterior(anchor, protos_1, opts.tau, PrototypeSetId::first);
    const auto p2 = prototype_posterior(anchor, protos_2, opts.tau, PrototypeSetId::second);

    LossBreakdown out;
    out.alpha = opts.alpha;
    out.tau = opts.tau;
    out.l_s1 = proto_ce_loss(p1, target);
    out.l_s2 = proto_ce_loss(p2, target);
    out.l_kl = kl_div(p1, p2);
    if (opts.symmetric_kl) out.l_kl += kl_div(p2, p1);
    out.total = out.l_s1 + out.l_s2 + opts.alpha * out.l_kl;
    if (!grad) return out;

    const std::size_t m = protos_1.size();
    // d/d(logits) of each term; logits_1 = P1 a / tau, logits_2 = P2 a / tau
    Vec g1(m), g2(m);
    for (std::size_t j = 0; j < m; ++j) {
        g1[j] = p1.probs[j] - (j == target ? 1.0 : 0.0);
        g2[j] = p2.probs[j] - (j == target ? 1.0 : 0.0);
    }
    if (opts.alpha != 0.0) {
        const double kl12 = kl_div(p1, p2);
        for (std::size_t j = 0; j < m; ++j) {
            const double d = p1.log_probs[j] - p2.log_probs[j];
            g1[j] += opts.alpha * p1.probs[j] * (d - kl12);
            g2[j] += opts.alpha * (p2.probs[j] - p1.probs[j]);
        }
        if (opts.symmetric_kl) {
            const double kl21 = kl_div(p2, p1);
            for (std::size_t j = 0; j < m; ++j) {
                const double d = p2.log_probs[j] - p1.log_probs[j];
                g2[j] += opts.alpha * p2.probs[j] * (d - kl21);
                g1[j] += opts.alpha * (p1.probs[j] - p2.probs[j]);
            }
        }
    }

    const std::size_t k = anchor.size();
    const double inv_tau = 1.0 / opts.tau;
    for (std::size_t j = 0; j < m; ++j) {
        const double c1 = g1[j] * inv_tau;
        const double c2 = g2[j] * inv_tau;
        for (std::size_t i = 0; i < k; ++i) {
            grad->anchor[i] += c1 * protos_1[j][i] + c2 * protos_2[j][i];
            grad->protos_1[j][i] += c1 * anchor[i];
            grad->protos_2[j][i] += c2 * anchor[i];
        }
    }
    return out;
}

LossBreakdown total_loss(std::span<const double> anchor, const VecList& protos_1, const VecList& protos_2,
                         std::size_t target, double tau, double alpha) {
    PrototypeLossOptions opts;
    opts.tau = tau;
    opts.alpha = alpha;
    return total_loss(anchor, protos_1, protos_2, target, opts, nullptr);
}

double avg_pairwise_kl(std::span<const double> anchor, const std::vector<VecList>& sets, double tau, std::size_t cap) {
    if (sets.size() > cap) {
        throw ConfigError("prototype-set count " + std::to_string(sets.size()) + " exceeds cap " + std::to_string(cap));
    }
    if (sets.size() < 2) return 0.0;
    std::vector<Posterior> posts;
    posts.reserve(sets.size());
    for (const auto& s : sets) posts.push_back(prototype_posterior(anchor, s, tau));
    double sum = 0.0;
    for (std::size_t p = 0; p < posts.size(); ++p)
        for (std::size_t q = 0; q < posts.size(); ++q)
            if (p != q) sum += kl_div(posts[p], posts[q]);
    const double n = static_cast<double>(sets.size());
    return 2.0 / (n * (n - 1.0)) * sum;
}

double softmax_ce_loss(const LinearHead& head, std::span<const double> feature, std::size_t target,
                       std::span<double> grad_weights, std::span<double> grad_feature) {
    if (target >= head.rows) throw ConfigError("target row out of range");
    if (feature.size() != head.dim) throw ConfigError("feature length does not match head");
    Vec logits(head.rows);
    for (std::size_t r = 0; r < head.rows; ++r) logits[r] = dot(head.weights.subspan(r * head.dim, head.dim), feature);
    const double lse = log_sum_exp(logits);
    const double loss = lse - logits[target];
    if (grad_weights.empty() && grad_feature.empty()) return loss;
    for (std::size_t r = 0; r < head.rows; ++r) {
        const double g = std::exp(logits[r] - lse) - (r == target ? 1.0 : 0.0);
        const double* w = head.weights.data() + r * head.dim;
        for (std::size_t i = 0; i < head.dim; ++i) {
            if (!grad_weights.empty()) grad_weights[r * head.dim + i] += g * feature[i];
            if (!grad_feature.empty()) grad_feature[i] += g * w[i];
        }
    }
    return loss;
}

double instance_softmax_loss(const LinearHead& head, std::span<const double> feature, std::size_t target,
                             std::span<double> grad_weights, std::span<double> grad_feature) {
    return softmax_ce_loss(head, feature, target, grad_weights, grad_feature);
}

double supervised_ce_loss(const LinearHead& head, std::span<const std::size_t> class_ids,
                          std::span<const double> feature, std::size_t class_label, std::span<double> grad_weights,
                          std::span<double> grad_feature) {
    const auto it = std::find(class_ids.begin(), class_ids.end(), class_label);
    if (it == class_ids.end()) {
        throw ConfigError("class " + std::to_string(class_label) + " is not one of the supervised head's classes");
    }
    const auto row = static_cast<std::size_t>(it - class_ids.begin());
    return softmax_ce_loss(head, feature, row, grad_weights, grad_feature);
}

double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, double margin, TripletGrad* grad) {
    double dp = 0.0, dn = 0.0;
    for (std::size_t i = 0; i < anchor.size(); ++i) {
        const double a = anchor[i] - positive[i];
        const double b = anchor[i] - negative[i];
        dp += a * a;
        dn += b * b;
    }
    const double raw = dp - dn + margin;
    if (raw <= 0.0) return 0.0;
    if (grad) {
        for (std::size_t i = 0; i < anchor.size(); ++i) {
            grad->anchor[i] += 2.0 * (negative[i] - positive[i]);
            grad->positive[i] += -2.0 * (anchor[i] - positive[i]);
            grad->negative[i] += 2.0 * (anchor[i] - negative[i]);
        }
    }
    return raw;
}

}  // namespace vispe
