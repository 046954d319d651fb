#include "classkit/encoder.hpp"

#include <algorithm>

namespace classkit {

std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

Activation parse_activation(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "relu") return Activation::Relu;
    throw ValidationError("unknown activation '" + s + "' (expected tanh|relu)");
}

void EncoderSpec::validate() const {
    if (input_dim == 0 || output_dim == 0) throw ValidationError("encoder dims must be >= 1");
    for (auto h : hidden_dims)
        if (h == 0) throw ValidationError("encoder hidden dims must be >= 1");
}

std::vector<LayerLayout> layout_for(const EncoderSpec& spec) {
    spec.validate();
    std::vector<std::size_t> dims{spec.input_dim};
    dims.insert(dims.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
    dims.push_back(spec.output_dim);
    std::vector<LayerLayout> layers;
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        LayerLayout L{dims[l], dims[l + 1], offset, offset + dims[l] * dims[l + 1]};
        offset = L.bias_offset + L.out;
        layers.push_back(L);
    }
    return layers;
}

ParamVector init_encoder(const EncoderSpec& spec, std::uint64_t seed) {
    ParamVector p{spec, layout_for(spec), {}};
    const auto& last = p.layers.back();
    p.values.assign(last.bias_offset + last.out, 0.0);
    std::mt19937_64 rng(seed);
    for (const auto& L : p.layers) {
        const double bound = std::sqrt(3.0 / static_cast<double>(L.in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t k = 0; k < L.in * L.out; ++k) p.values[L.weight_offset + k] = u(rng);
    }
    return p;
}

namespace {

void check_batch(const ParamVector& params, const Matrix& batch) {
    if (batch.cols != params.spec.input_dim)
        throw ValidationError("encoder input has " + std::to_string(batch.cols) + " columns, expected " +
                              std::to_string(params.spec.input_dim));
}

// out = in * W^T + b
Matrix affine(const ParamVector& p, const LayerLayout& L, const Matrix& in) {
    Matrix out(in.rows, L.out);
    const double* W = p.values.data() + L.weight_offset;
    const double* b = p.values.data() + L.bias_offset;
    for (std::size_t r = 0; r < in.rows; ++r) {
        const double* x = in.data.data() + r * in.cols;
        double* y = out.data.data() + r * L.out;
        for (std::size_t o = 0; o < L.out; ++o) {
            const double* w = W + o * L.in;
            double s = b[o];
            for (std::size_t i = 0; i < L.in; ++i) s += w[i] * x[i];
            y[o] = s;
        }
    }
    return out;
}

void activate(Activation a, Matrix& m) {
    for (double& v : m.data) v = a == Activation::Tanh ? std::tanh(v) : std::max(0.0, v);
}

// Derivative expressed through the activation output.
double activation_grad(Activation a, double post) {
    return a == Activation::Tanh ? 1.0 - post * post : (post > 0.0 ? 1.0 : 0.0);
}

}  // namespace

Matrix encode(const ParamVector& params, const Matrix& batch, ForwardCache& cache) {
    check_batch(params, batch);
    cache.post.clear();
    cache.post.push_back(batch);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        Matrix next = affine(params, params.layers[l], cache.post.back());
        if (l + 1 < params.layers.size()) activate(params.spec.activation, next);
        cache.post.push_back(std::move(next));
    }
    return cache.post.back();
}

Matrix encode(const ParamVector& params, const Matrix& batch) {
    ForwardCache cache;
    return encode(params, batch, cache);
}

Gradients backward(const ParamVector& params, const ForwardCache& cache, const Matrix& upstream) {
    const auto& layers = params.layers;
    if (cache.post.size() != layers.size() + 1) throw ValidationError("forward cache does not match parameters");
    const std::size_t B = cache.post.front().rows;
    if (upstream.rows != B || upstream.cols != params.spec.output_dim)
        throw ValidationError("upstream gradient shape mismatch");

    Gradients g{Vec(params.size(), 0.0), {}};
    Matrix delta = upstream;  // gradient w.r.t. the pre-activation of the current layer
    for (std::size_t l = layers.size(); l-- > 0;) {
        const auto& L = layers[l];
        const Matrix& in = cache.post[l];
        double* gW = g.params.data() + L.weight_offset;
        double* gb = g.params.data() + L.bias_offset;
        for (std::size_t r = 0; r < B; ++r) {
            const double* d = delta.data.data() + r * L.out;
            const double* x = in.data.data() + r * L.in;
            for (std::size_t o = 0; o < L.out; ++o) {
                gb[o] += d[o];
                double* row = gW + o * L.in;
                for (std::size_t i = 0; i < L.in; ++i) row[i] += d[o] * x[i];
            }
        }
        Matrix prev(B, L.in);
        const double* W = params.values.data() + L.weight_offset;
        for (std::size_t r = 0; r < B; ++r) {
            const double* d = delta.data.data() + r * L.out;
            double* p = prev.data.data() + r * L.in;
            for (std::size_t o = 0; o < L.out; ++o) {
                const double* w = W + o * L.in;
                for (std::size_t i = 0; i < L.in; ++i) p[i] += d[o] * w[i];
            }
        }
        if (l > 0)
            for (std::size_t k = 0; k < prev.data.size(); ++k)
                prev.data[k] *= activation_grad(params.spec.activation, in.data[k]);
        delta = std::move(prev);
    }
    g.input = std::move(delta);
    return g;
}

Vec backward(const ParamVector& params, const Matrix& batch, const Matrix& upstream) {
    ForwardCache cache;
    encode(params, batch, cache);
    return backward(params, cache, upstream).params;
}

Vec normalize(std::span<const double> z) {
    const double n = norm2(z);
    if (!(n > kNormEpsilon)) throw NumericError("cannot normalize a near-zero latent (norm " + std::to_string(n) + ")");
    Vec out(z.begin(), z.end());
    for (double& v : out) v /= n;
    return out;
}

NormalizedRows normalize_rows(const Matrix& z) {
    NormalizedRows n{Matrix(z.rows, z.cols), Vec(z.rows)};
    for (std::size_t r = 0; r < z.rows; ++r) {
        const double len = norm2(z.row(r));
        if (!(len > kNormEpsilon))
            throw NumericError("latent row " + std::to_string(r) + " has near-zero norm (degenerate encoder output)");
        n.norms[r] = len;
        for (std::size_t c = 0; c < z.cols; ++c) n.unit(r, c) = z(r, c) / len;
    }
    return n;
}

Matrix normalize_backward(const NormalizedRows& n, const Matrix& grad_unit) {
    Matrix g(grad_unit.rows, grad_unit.cols);
    for (std::size_t r = 0; r < g.rows; ++r) {
        const double proj = dot(n.unit.row(r), grad_unit.row(r));
        for (std::size_t c = 0; c < g.cols; ++c) g(r, c) = (grad_unit(r, c) - n.unit(r, c) * proj) / n.norms[r];
    }
    return g;
}

void AugmentConfig::validate() const {
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ValidationError("noise_sigma must be >= 0");
    if (!(mask_prob >= 0.0 && mask_prob < 1.0)) throw ValidationError("mask_prob must lie in [0, 1)");
}

Vec augment(std::span<const double> obs, const AugmentConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    Vec out(obs.begin(), obs.end());
    if (cfg.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
        for (double& v : out) v += noise(rng);
    }
    if (cfg.mask_prob > 0.0) {
        std::bernoulli_distribution mask(cfg.mask_prob);
        for (double& v : out)
            if (mask(rng)) v = 0.0;
    }
    return out;
}

}  // namespace classkit
