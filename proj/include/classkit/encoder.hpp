#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "classkit/types.hpp"

namespace classkit {

enum class Activation { Tanh, Relu };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

// Multilayer perceptron: hidden layers use `activation`, the output layer is linear.
struct EncoderSpec {
    std::size_t input_dim = 0;
    std::vector<std::size_t> hidden_dims;
    std::size_t output_dim = 0;
    Activation activation = Activation::Tanh;

    void validate() const;
    bool operator==(const EncoderSpec&) const = default;
};

struct LayerLayout {
    std::size_t in = 0, out = 0;
    std::size_t weight_offset = 0;  // out x in, row-major
    std::size_t bias_offset = 0;
    bool operator==(const LayerLayout&) const = default;
};

struct ParamVector {
    EncoderSpec spec;
    std::vector<LayerLayout> layers;
    Vec values;

    std::size_t size() const { return values.size(); }
    bool operator==(const ParamVector&) const = default;
};

std::vector<LayerLayout> layout_for(const EncoderSpec& spec);

// Weights ~ U(-sqrt(3/fan_in), sqrt(3/fan_in)), biases zero.
ParamVector init_encoder(const EncoderSpec& spec, std::uint64_t seed);

// Activations kept for the backward pass. post[0] is the input batch.
struct ForwardCache {
    std::vector<Matrix> post;
};

Matrix encode(const ParamVector& params, const Matrix& batch);
Matrix encode(const ParamVector& params, const Matrix& batch, ForwardCache& cache);

struct Gradients {
    Vec params;   // same layout as ParamVector::values
    Matrix input;  // d(out)/d(batch) contracted with upstream
};

// Reverse pass of encode contracted with `upstream` (batch x output_dim).
Gradients backward(const ParamVector& params, const ForwardCache& cache, const Matrix& upstream);
Vec backward(const ParamVector& params, const Matrix& batch, const Matrix& upstream);

constexpr double kNormEpsilon = 1e-9;

// z / ||z||; throws NumericError when ||z|| <= kNormEpsilon.
Vec normalize(std::span<const double> z);

struct NormalizedRows {
    Matrix unit;
    Vec norms;
};
NormalizedRows normalize_rows(const Matrix& z);

// Chains a gradient on the normalized rows back to the raw rows.
Matrix normalize_backward(const NormalizedRows& n, const Matrix& grad_unit);

// Vector-space analog of crop + noise augmentation.
struct AugmentConfig {
    double noise_sigma = 0.01;
    double mask_prob = 0.1;

    void validate() const;
};

Vec augment(std::span<const double> obs, const AugmentConfig& cfg, std::mt19937_64& rng);

}  // namespace classkit
