#include "vispe/objective.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vispe/errors.hpp"

namespace vispe {

namespace {

void require_finite(double v, const char* term, std::size_t example) {
    if (!std::isfinite(v)) {
        throw NumericError(std::string("non-finite ") + term + " at batch example " + std::to_string(example));
    }
}

std::vector<ForwardTrace> forward_all(const EmbedderParams& params, const std::vector<std::span<const float>>& xs) {
    std::vector<ForwardTrace> traces;
    traces.reserve(xs.size());
    for (const auto& x : xs) traces.push_back(forward(params, x));
    return traces;
}

VecList outputs_of(const std::vector<ForwardTrace>& traces) {
    VecList out;
    out.reserve(traces.size());
    for (const auto& t : traces) out.push_back(t.output);
    return out;
}

}  // namespace

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::instance: return "instance";
        case Mode::pe: return "pe";
        case Mode::mvspe: return "mvspe";
        case Mode::vispe: return "vispe";
        case Mode::triplet: return "triplet";
        case Mode::supervised: return "supervised";
    }
    return "?";
}

Mode parse_mode(const std::string& name) {
    for (auto m : all_modes())
        if (to_string(m) == name) return m;
    throw ConfigError("unknown mode `" + name + "` (expected instance, pe, mvspe, vispe, triplet or supervised)");
}

bool uses_prototypes(Mode mode) { return mode == Mode::pe || mode == Mode::mvspe || mode == Mode::vispe; }

const std::vector<Mode>& all_modes() {
    static const std::vector<Mode> modes{Mode::instance, Mode::pe,      Mode::mvspe,
                                         Mode::vispe,    Mode::triplet, Mode::supervised};
    return modes;
}

TrainingBatch build_batch(Mode mode, const MultiviewDataset& ds, const MinibatchPlan& plan, Rng& rng) {
    TrainingBatch batch;
    const std::size_t m = plan.size();
    auto view = [&](std::size_t id, std::size_t j) { return std::span<const float>(ds.objects[id].views[j]); };
    for (std::size_t b = 0; b < m; ++b) {
        const std::size_t id = plan.instance_ids[b];
        batch.anchors.push_back(view(id, plan.anchor_views[b]));
        switch (mode) {
            case Mode::pe:
            case Mode::mvspe:
            case Mode::vispe:
                batch.targets.push_back(b);
                batch.protos_1.push_back(view(id, plan.proto_views_1[b]));
                batch.protos_2.push_back(view(id, plan.proto_views_2[b]));
                break;
            case Mode::instance:
                batch.targets.push_back(id);
                break;
            case Mode::supervised:
                batch.targets.push_back(ds.objects[id].class_id);
                break;
            case Mode::triplet: {
                batch.targets.push_back(id);
                const std::size_t V = ds.objects[id].view_count();
                std::size_t pos = plan.anchor_views[b];
                if (V >= 2) {
                    std::uniform_int_distribution<std::size_t> pick(0, V - 2);
                    const std::size_t v = pick(rng);
                    pos = v >= pos ? v + 1 : v;
                }
                batch.positives.push_back(view(id, pos));
                const std::size_t n = ds.objects.size();
                if (n < 2) throw ConfigError("triplet mode needs at least two training instances");
                std::uniform_int_distribution<std::size_t> other(0, n - 2);
                std::size_t neg = other(rng);
                if (neg >= id) ++neg;
                std::uniform_int_distribution<std::size_t> neg_view(0, ds.objects[neg].view_count() - 1);
                batch.negatives.push_back(view(neg, neg_view(rng)));
                break;
            }
        }
    }
    return batch;
}

BatchLoss loss_and_grads(const EmbedderParams& params, const TrainingBatch& batch, const LossSettings& settings,
                         bool want_grad) {
    BatchLoss out;
    out.examples = batch.anchors.size();
    if (want_grad) out.grad.assign(params.theta.size(), 0.0);
    const std::size_t k = params.arch.embed_dim;
    const std::size_t m = batch.anchors.size();
    std::span<double> grad(out.grad);

    const auto anchors = forward_all(params, batch.anchors);
    VecList d_anchor(m, Vec(k, 0.0));

    switch (settings.mode) {
        case Mode::pe:
        case Mode::mvspe:
        case Mode::vispe: {
            const auto t1 = forward_all(params, batch.protos_1);
            const auto t2 = forward_all(params, batch.protos_2);
            const VecList p1 = outputs_of(t1);
            const VecList p2 = outputs_of(t2);
            PrototypeLossGrad g;
            g.reset(m, k);
            for (std::size_t b = 0; b < m; ++b) {
                std::fill(g.anchor.begin(), g.anchor.end(), 0.0);
                const auto br = total_loss(anchors[b].output, p1, p2, batch.targets[b], settings.proto,
                                           want_grad ? &g : nullptr);
                require_finite(br.l_s1, "L_s1", b);
                require_finite(br.l_s2, "L_s2", b);
                require_finite(br.l_kl, "L_KL", b);
                out.l_s1 += br.l_s1;
                out.l_s2 += br.l_s2;
                out.l_kl += br.l_kl;
                out.total += br.total;
                if (want_grad) d_anchor[b] = g.anchor;
            }
            if (want_grad && !settings.stop_grad_protos) {
                for (std::size_t b = 0; b < m; ++b) {
                    backward(params, t1[b], g.protos_1[b], grad);
                    backward(params, t2[b], g.protos_2[b], grad);
                }
            }
            break;
        }
        case Mode::instance:
        case Mode::supervised: {
            if (params.head_rows == 0) throw ConfigError(to_string(settings.mode) + " mode needs a linear head");
            const LinearHead head{params.head(), params.head_rows, k};
            std::span<double> g_head =
                want_grad ? grad.subspan(params.network_size(), params.head_rows * k) : std::span<double>{};
            for (std::size_t b = 0; b < m; ++b) {
                std::span<double> g_feat = want_grad ? std::span<double>(d_anchor[b]) : std::span<double>{};
                double l = 0.0;
                if (settings.mode == Mode::instance) {
                    l = instance_softmax_loss(head, anchors[b].output, batch.targets[b], g_head, g_feat);
                } else {
                    l = supervised_ce_loss(head, settings.class_ids, anchors[b].output, batch.targets[b], g_head,
                                           g_feat);
                }
                require_finite(l, "cross-entropy", b);
                out.l_s1 += l;
                out.total += l;
            }
            break;
        }
        case Mode::triplet: {
            const auto tp = forward_all(params, batch.positives);
            const auto tn = forward_all(params, batch.negatives);
            for (std::size_t b = 0; b < m; ++b) {
                TripletGrad g{Vec(k, 0.0), Vec(k, 0.0), Vec(k, 0.0)};
                const double l =
                    triplet_loss(anchors[b].output, tp[b].output, tn[b].output, settings.margin, want_grad ? &g : nullptr);
                require_finite(l, "triplet loss", b);
                out.l_s1 += l;
                out.total += l;
                if (want_grad) {
                    d_anchor[b] = g.anchor;
                    backward(params, tp[b], g.positive, grad);
                    backward(params, tn[b], g.negative, grad);
                }
            }
            break;
        }
    }
    require_finite(out.total, "total loss", m);
    if (want_grad) {
        for (std::size_t b = 0; b < m; ++b) backward(params, anchors[b], d_anchor[b], grad);
    }
    return out;
}

GradCheckResult check_gradient(const Objective& objective, std::span<const double> theta, const GradCheckOptions& opts) {
    std::vector<double> analytic;
    objective(theta, &analytic);
    const std::size_t n = theta.size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.coordinates < n) {
        Rng rng = make_rng(opts.seed, 0x67636bULL);
        for (std::size_t i = 0; i < opts.coordinates; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(coords[i], coords[pick(rng)]);
        }
        coords.resize(opts.coordinates);
    }

    GradCheckResult res;
    std::vector<double> probe(theta.begin(), theta.end());
    for (auto c : coords) {
        const double orig = probe[c];
        probe[c] = orig + opts.eps;
        const double up = objective(probe, nullptr);
        probe[c] = orig - opts.eps;
        const double down = objective(probe, nullptr);
        probe[c] = orig;
        const double central = (up - down) / (2.0 * opts.eps);
        const double a = analytic[c];
        const double rel = std::abs(a - central) / std::max({std::abs(a), std::abs(central), 1e-8});
        if (rel > res.max_rel_error || res.coordinates_checked == 0) {
            res.max_rel_error = rel;
            res.worst_coordinate = c;
        }
        ++res.coordinates_checked;
    }
    return res;
}

GradCheckResult gradient_check(const EmbedderParams& params, const TrainingBatch& batch, const LossSettings& settings,
                               const GradCheckOptions& opts) {
    EmbedderParams work = params;
    Objective fn = [&](std::span<const double> theta, std::vector<double>* grad) {
        std::copy(theta.begin(), theta.end(), work.theta.begin());
        auto r = loss_and_grads(work, batch, settings, grad != nullptr);
        if (grad) *grad = std::move(r.grad);
        return r.total;
    };
    return check_gradient(fn, params.theta, opts);
}

}  // namespace vispe
