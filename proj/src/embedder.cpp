#include "vispe/embedder.hpp"

#include <cmath>

#include "vispe/errors.hpp"
#include "vispe/rng.hpp"

namespace vispe {

namespace {

std::vector<std::size_t> layer_dims(const Arch& arch) {
    std::vector<std::size_t> dims{arch.input_dim};
    dims.insert(dims.end(), arch.hidden_dims.begin(), arch.hidden_dims.end());
    dims.push_back(arch.embed_dim);
    return dims;
}

void check_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) throw NumericError("embedding input contains a non-finite value");
}

}  // namespace

void Arch::validate() const {
    if (input_dim == 0 || embed_dim == 0) throw ConfigError("input_dim and embed_dim must be >= 1");
    for (auto h : hidden_dims)
        if (h == 0) throw ConfigError("hidden layer widths must be >= 1");
    if (!(norm_epsilon > 0)) throw ConfigError("norm_epsilon must be positive");
}

std::size_t parameter_count(const Arch& arch, std::size_t head_rows) {
    const auto dims = layer_dims(arch);
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += dims[l + 1] * dims[l] + dims[l + 1];
    return n + head_rows * arch.embed_dim;
}

std::vector<ParamBlock> EmbedderParams::layout() const {
    const auto dims = layer_dims(arch);
    std::vector<ParamBlock> blocks;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        blocks.push_back({"layer" + std::to_string(l) + ".weight", dims[l + 1], dims[l], offset});
        offset += dims[l + 1] * dims[l];
        blocks.push_back({"layer" + std::to_string(l) + ".bias", dims[l + 1], 1, offset});
        offset += dims[l + 1];
    }
    if (head_rows > 0) blocks.push_back({"head.weight", head_rows, arch.embed_dim, offset});
    return blocks;
}

std::size_t EmbedderParams::network_size() const { return parameter_count(arch, 0); }

std::span<const double> EmbedderParams::head() const {
    return std::span<const double>(theta).subspan(network_size(), head_rows * arch.embed_dim);
}

EmbedderParams init(const Arch& arch, std::uint64_t seed, std::size_t head_rows) {
    arch.validate();
    EmbedderParams p;
    p.arch = arch;
    p.head_rows = head_rows;
    p.theta.assign(parameter_count(arch, head_rows), 0.0);
    Rng rng = make_rng(seed, 0x696e6974ULL);
    for (const auto& block : p.layout()) {
        if (block.cols == 1 && block.name.ends_with(".bias")) continue;
        // the head maps k -> head_rows, so fan_in = cols, fan_out = rows either way
        const double a = std::sqrt(6.0 / static_cast<double>(block.rows + block.cols));
        std::uniform_real_distribution<double> dist(-a, a);
        for (std::size_t i = 0; i < block.size(); ++i) p.theta[block.offset + i] = dist(rng);
    }
    return p;
}

ForwardTrace forward(const EmbedderParams& params, std::span<const double> x) {
    const auto& arch = params.arch;
    if (x.size() != arch.input_dim) {
        throw ConfigError("input has length " + std::to_string(x.size()) + ", network expects " +
                          std::to_string(arch.input_dim));
    }
    check_finite(x);
    const auto dims = layer_dims(arch);
    const std::size_t n_layers = dims.size() - 1;

    ForwardTrace t;
    t.activations.reserve(n_layers);
    t.activations.emplace_back(x.begin(), x.end());
    std::size_t offset = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::size_t in = dims[l];
        const std::size_t out = dims[l + 1];
        const double* W = params.theta.data() + offset;
        const double* b = W + out * in;
        offset += out * in + out;
        const auto& a = t.activations.back();
        std::vector<double> z(out);
        for (std::size_t r = 0; r < out; ++r) {
            double acc = b[r];
            const double* row = W + r * in;
            for (std::size_t c = 0; c < in; ++c) acc += row[c] * a[c];
            z[r] = acc;
        }
        const bool last = l + 1 == n_layers;
        if (last) {
            t.pre_norm = std::move(z);
        } else {
            if (arch.activation == Activation::tanh)
                for (auto& v : z) v = std::tanh(v);
            t.activations.push_back(std::move(z));
        }
    }

    if (!arch.normalize) {
        t.output = t.pre_norm;
        return t;
    }
    double sq = 0.0;
    for (double v : t.pre_norm) sq += v * v;
    t.norm = std::sqrt(sq);
    t.output.assign(t.pre_norm.size(), 0.0);
    if (t.norm == 0.0) {
        t.degenerate = true;
        return t;
    }
    const double scale = 1.0 / (t.norm + arch.norm_epsilon);
    for (std::size_t i = 0; i < t.pre_norm.size(); ++i) t.output[i] = t.pre_norm[i] * scale;
    return t;
}

ForwardTrace forward(const EmbedderParams& params, std::span<const float> x) {
    std::vector<double> xd(x.begin(), x.end());
    return forward(params, std::span<const double>(xd));
}

void backward(const EmbedderParams& params, const ForwardTrace& trace, std::span<const double> grad_output,
              std::span<double> grad_theta) {
    const auto& arch = params.arch;
    const auto dims = layer_dims(arch);
    const std::size_t n_layers = dims.size() - 1;
    if (trace.degenerate) return;

    // through y = h / (|h| + eps)
    std::vector<double> delta(grad_output.begin(), grad_output.end());
    if (arch.normalize) {
        const double s = trace.norm + arch.norm_epsilon;
        double gh = 0.0;
        for (std::size_t i = 0; i < delta.size(); ++i) gh += delta[i] * trace.pre_norm[i];
        const double coef = gh / (s * s * trace.norm);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = delta[i] / s - coef * trace.pre_norm[i];
    }

    std::vector<std::size_t> offsets(n_layers);
    std::size_t offset = 0;
    for (std::size_t l = 0; l < n_layers; ++l) {
        offsets[l] = offset;
        offset += dims[l + 1] * dims[l] + dims[l + 1];
    }

    for (std::size_t l = n_layers; l-- > 0;) {
        const std::size_t in = dims[l];
        const std::size_t out = dims[l + 1];
        const double* W = params.theta.data() + offsets[l];
        double* gW = grad_theta.data() + offsets[l];
        double* gb = gW + out * in;
        const auto& a = trace.activations[l];
        for (std::size_t r = 0; r < out; ++r) {
            const double d = delta[r];
            if (d == 0.0) continue;
            gb[r] += d;
            double* grow = gW + r * in;
            for (std::size_t c = 0; c < in; ++c) grow[c] += d * a[c];
        }
        if (l == 0) break;
        std::vector<double> prev(in, 0.0);
        for (std::size_t r = 0; r < out; ++r) {
            const double d = delta[r];
            if (d == 0.0) continue;
            const double* row = W + r * in;
            for (std::size_t c = 0; c < in; ++c) prev[c] += row[c] * d;
        }
        if (arch.activation == Activation::tanh)
            for (std::size_t c = 0; c < in; ++c) prev[c] *= 1.0 - a[c] * a[c];
        delta = std::move(prev);
    }
}

std::vector<double> embed(const EmbedderParams& params, std::span<const double> x, bool* degenerate) {
    auto t = forward(params, x);
    if (degenerate) *degenerate = t.degenerate;
    return std::move(t.output);
}

std::vector<double> embed(const EmbedderParams& params, std::span<const float> x, bool* degenerate) {
    auto t = forward(params, x);
    if (degenerate) *degenerate = t.degenerate;
    return std::move(t.output);
}

namespace {
template <typename Real>
std::vector<std::vector<double>> embed_rows(const EmbedderParams& params, const std::vector<std::vector<Real>>& xs) {
    std::vector<std::vector<double>> out;
    out.reserve(xs.size());
    for (const auto& x : xs) {
        if (x.size() != params.arch.input_dim) throw ConfigError("ragged batch: row length differs from input_dim");
    }
    for (const auto& x : xs) out.push_back(embed(params, std::span<const Real>(x)));
    return out;
}
}  // namespace

std::vector<std::vector<double>> embed_batch(const EmbedderParams& params, const std::vector<std::vector<double>>& xs) {
    return embed_rows(params, xs);
}

std::vector<std::vector<double>> embed_batch(const EmbedderParams& params, const std::vector<std::vector<float>>& xs) {
    return embed_rows(params, xs);
}

}  // namespace vispe
