#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vispe {

using Vec = std::vector<double>;
using VecList = std::vector<Vec>;

enum class PrototypeSetId { first, second };

// Softmax over prototype similarities, kept in log space so that cross
// entropy and KL never take the log of a stored probability.
struct Posterior {
    Vec logits;     // proto_k . anchor / tau
    Vec log_probs;  // logits - logsumexp(logits)
    Vec probs;
    PrototypeSetId set_id = PrototypeSetId::first;
    double tau = 0.0;

    std::size_t size() const { return probs.size(); }
};

double log_sum_exp(std::span<const double> logits);

// Throws ConfigError for tau <= 0 or an empty prototype set, NumericError
// when an input deviates from unit norm by more than 1e-6.
Posterior prototype_posterior(std::span<const double> anchor, const VecList& protos, double tau,
                              PrototypeSetId id = PrototypeSetId::first);

double proto_ce_loss(const Posterior& posterior, std::size_t target);

// KL(p || q) over the same anchor, with 0 log(0/q) := 0.
double kl_div(const Posterior& p, const Posterior& q);

struct LossBreakdown {
    double l_s1 = 0.0;
    double l_s2 = 0.0;
    double l_kl = 0.0;
    double total = 0.0;
    double alpha = 0.0;
    double tau = 0.0;
};

// Gradients of one example's loss with respect to every vector it touched.
struct PrototypeLossGrad {
    Vec anchor;
    VecList protos_1;
    VecList protos_2;

    void reset(std::size_t m, std::size_t k);
};

struct PrototypeLossOptions {
    double tau = 0.05;
    double alpha = 5.0;
    // KL(P1||P2) + KL(P2||P1) instead of the one-way KL(P1||P2).
    bool symmetric_kl = false;
};

// L = L_s1 + L_s2 + alpha * KL(P^{s1} || P^{s2}) for one anchor whose true
// instance is `target`. When `grad` is non-null the gradient is added to it.
LossBreakdown total_loss(std::span<const double> anchor, const VecList& protos_1, const VecList& protos_2,
                         std::size_t target, const PrototypeLossOptions& opts, PrototypeLossGrad* grad = nullptr);

LossBreakdown total_loss(std::span<const double> anchor, const VecList& protos_1, const VecList& protos_2,
                         std::size_t target, double tau, double alpha);

inline constexpr std::size_t kDefaultEnumerationCap = 10'000;

// K * sum over ordered pairs p != q of KL(P^{s_p} || P^{s_q}), with
// K = 2 / (|S| (|S| - 1)); zero for fewer than two sets.
double avg_pairwise_kl(std::span<const double> anchor, const std::vector<VecList>& sets, double tau,
                       std::size_t cap = kDefaultEnumerationCap);

// Row-major linear classifier over embeddings.
struct LinearHead {
    std::span<const double> weights;  // rows x dim
    std::size_t rows = 0;
    std::size_t dim = 0;
};

// Softmax cross entropy of W f against `target`. Gradients are accumulated
// when the output spans are non-empty.
double softmax_ce_loss(const LinearHead& head, std::span<const double> feature, std::size_t target,
                       std::span<double> grad_weights = {}, std::span<double> grad_feature = {});

// Instance-classifier baseline: one head row per training instance.
double instance_softmax_loss(const LinearHead& head, std::span<const double> feature, std::size_t target,
                             std::span<double> grad_weights = {}, std::span<double> grad_feature = {});

// Supervised baseline: one head row per seen class; class_ids[r] is the class
// of row r. Throws ConfigError for a label outside class_ids.
double supervised_ce_loss(const LinearHead& head, std::span<const std::size_t> class_ids,
                          std::span<const double> feature, std::size_t class_label,
                          std::span<double> grad_weights = {}, std::span<double> grad_feature = {});

struct TripletGrad {
    Vec anchor;
    Vec positive;
    Vec negative;
};

// max(0, |a - p|^2 - |a - n|^2 + margin)
double triplet_loss(std::span<const double> anchor, std::span<const double> positive,
                    std::span<const double> negative, double margin, TripletGrad* grad = nullptr);

}  // namespace vispe
