#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace vispe {

enum class Activation { tanh, identity };

// Fully connected embedding network: hidden layers use `activation`, the
// output layer is linear and then projected to the unit sphere.
struct Arch {
    std::size_t input_dim = 64;
    std::vector<std::size_t> hidden_dims{128, 64};
    std::size_t embed_dim = 32;
    Activation activation = Activation::tanh;
    double norm_epsilon = 1e-12;
    // Off only for gradient-check fixtures that need a plain linear map.
    bool normalize = true;

    void validate() const;
    bool operator==(const Arch&) const = default;
};

// Location of one weight matrix or bias vector inside the flat parameter vector.
struct ParamBlock {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t offset = 0;

    std::size_t size() const { return rows * cols; }
    bool operator==(const ParamBlock&) const = default;
};

// All learnable parameters theta as one flat vector. Layer l contributes
// W_l (out x in, row-major) followed by b_l. An optional linear head
// (head_rows x embed_dim) for the instance-classifier and supervised
// baselines sits after the network and is updated by the same SGD step.
struct EmbedderParams {
    Arch arch;
    std::size_t head_rows = 0;
    std::vector<double> theta;

    std::vector<ParamBlock> layout() const;
    std::size_t layer_count() const { return arch.hidden_dims.size() + 1; }
    std::size_t network_size() const;  // parameters before the head
    std::span<const double> head() const;
    bool operator==(const EmbedderParams&) const = default;
};

std::size_t parameter_count(const Arch& arch, std::size_t head_rows = 0);

// Xavier-uniform weights, zero biases.
EmbedderParams init(const Arch& arch, std::uint64_t seed, std::size_t head_rows = 0);

// Intermediate values of one forward pass, kept for the backward pass.
struct ForwardTrace {
    std::vector<std::vector<double>> activations;  // [0] is the input
    std::vector<double> pre_norm;
    double norm = 0.0;
    std::vector<double> output;
    bool degenerate = false;  // pre-norm output was exactly zero
};

ForwardTrace forward(const EmbedderParams& params, std::span<const double> x);
ForwardTrace forward(const EmbedderParams& params, std::span<const float> x);

// Accumulates d(loss)/d(theta) into grad_theta given d(loss)/d(output).
void backward(const EmbedderParams& params, const ForwardTrace& trace, std::span<const double> grad_output,
              std::span<double> grad_theta);

// Unit-norm embedding. A zero pre-norm vector maps to the zero vector and
// sets *degenerate.
std::vector<double> embed(const EmbedderParams& params, std::span<const double> x, bool* degenerate = nullptr);
std::vector<double> embed(const EmbedderParams& params, std::span<const float> x, bool* degenerate = nullptr);

std::vector<std::vector<double>> embed_batch(const EmbedderParams& params, const std::vector<std::vector<double>>& xs);
std::vector<std::vector<double>> embed_batch(const EmbedderParams& params, const std::vector<std::vector<float>>& xs);

}  // namespace vispe
