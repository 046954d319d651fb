#include <doctest.h>

#include <cmath>
#include <random>

#include "classkit/encoder.hpp"
#include "test_util.hpp"

using namespace classkit;
using classkit::testing::random_matrix;

namespace {

double contract(const Matrix& a, const Matrix& b) { return dot(a.data, b.data); }

}  // namespace

TEST_CASE("init is deterministic, seed sensitive, and bounded by fan-in") {
    const EncoderSpec spec{5, {7, 3}, 4, Activation::Tanh};
    const auto a = init_encoder(spec, 1);
    const auto b = init_encoder(spec, 1);
    const auto c = init_encoder(spec, 2);
    CHECK(a == b);
    CHECK(a.values != c.values);
    CHECK(a.size() == 5 * 7 + 7 + 7 * 3 + 3 + 3 * 4 + 4);
    for (const auto& l : a.layers) {
        const double bound = std::sqrt(3.0 / static_cast<double>(l.in));
        for (std::size_t k = 0; k < l.in * l.out; ++k) CHECK(std::abs(a.values[l.weight_offset + k]) <= bound);
        for (std::size_t k = 0; k < l.out; ++k) CHECK(a.values[l.bias_offset + k] == 0.0);
    }
    CHECK_THROWS_AS(init_encoder(EncoderSpec{0, {}, 3}, 1), ValidationError);
    CHECK_THROWS_AS(init_encoder(EncoderSpec{2, {0}, 3}, 1), ValidationError);
}

TEST_CASE("zero-hidden spec is a linear map") {
    const EncoderSpec spec{3, {}, 2, Activation::Relu};
    const auto p = init_encoder(spec, 5);
    REQUIRE(p.layers.size() == 1);
    std::mt19937_64 rng(0);
    const Matrix x = random_matrix(rng, 1, 3);
    Matrix x2 = x;
    for (auto& v : x2.data) v *= -2.5;
    const Matrix y = encode(p, x);
    const Matrix y2 = encode(p, x2);
    for (std::size_t k = 0; k < 2; ++k) CHECK(y2.data[k] == doctest::Approx(-2.5 * y.data[k]).epsilon(1e-14));
    CHECK(encode(p, Matrix(1, 3)).data == Vec{0.0, 0.0});
}

TEST_CASE("batch shape, repeated rows, dimension errors") {
    const EncoderSpec spec{4, {6}, 3, Activation::Tanh};
    const auto p = init_encoder(spec, 9);
    std::mt19937_64 rng(1);
    Matrix x = random_matrix(rng, 5, 4);
    for (std::size_t c = 0; c < 4; ++c) x(3, c) = x(1, c);
    const Matrix z = encode(p, x);
    CHECK(z.rows == 5);
    CHECK(z.cols == 3);
    for (std::size_t c = 0; c < 3; ++c) CHECK(z(3, c) == z(1, c));
    CHECK_THROWS_AS(encode(p, Matrix(2, 5)), ValidationError);
}

TEST_CASE("normalize") {
    const Vec z{3.0, 4.0};
    const Vec u = normalize(z);
    CHECK(u[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(u[1] == doctest::Approx(0.8).epsilon(1e-15));
    const Vec e{0.0, 1.0, 0.0};
    CHECK(normalize(e) == e);
    CHECK_THROWS_AS(normalize(Vec{0.0, 0.0}), NumericError);
    CHECK_THROWS_AS(normalize(Vec{1e-10, 0.0}), NumericError);

    std::mt19937_64 rng(2);
    for (int k = 0; k < 100; ++k) {
        const Matrix m = random_matrix(rng, 1, 7);
        CHECK(std::abs(norm2(normalize(m.data)) - 1.0) <= 1e-12);
    }
}

TEST_CASE("augment") {
    std::mt19937_64 rng(3);
    const Vec obs{1.0, -2.0, 3.0};
    CHECK(augment(obs, AugmentConfig{0.0, 0.0}, rng) == obs);
    CHECK_THROWS_AS(AugmentConfig({0.01, 1.0}).validate(), ValidationError);
    CHECK_THROWS_AS(AugmentConfig({-0.01, 0.1}).validate(), ValidationError);

    std::mt19937_64 r1(77), r2(77);
    CHECK(augment(obs, AugmentConfig{}, r1) == augment(obs, AugmentConfig{}, r2));

    // Masked coordinates are exactly zero; the masking rate is near mask_prob.
    std::mt19937_64 r3(5);
    const Vec ones(1000, 1.0);
    const Vec out = augment(ones, AugmentConfig{0.0, 0.2}, r3);
    const auto zeros = std::count(out.begin(), out.end(), 0.0);
    CHECK(zeros > 150);
    CHECK(zeros < 250);
}

TEST_CASE("backward: zero upstream, single linear layer outer product") {
    const EncoderSpec spec{3, {}, 2, Activation::Tanh};
    const auto p = init_encoder(spec, 4);
    Matrix x(1, 3);
    x.data = {0.5, -1.0, 2.0};
    CHECK(backward(p, x, Matrix(1, 2)) == Vec(p.size(), 0.0));

    Matrix up(1, 2);
    up.data = {0.3, -0.7};
    const Vec g = backward(p, x, up);
    const auto& l = p.layers[0];
    for (std::size_t o = 0; o < 2; ++o) {
        for (std::size_t i = 0; i < 3; ++i) CHECK(g[l.weight_offset + o * 3 + i] == doctest::Approx(up.data[o] * x.data[i]));
        CHECK(g[l.bias_offset + o] == doctest::Approx(up.data[o]));
    }
    CHECK_THROWS_AS(backward(p, x, Matrix(1, 3)), ValidationError);
    CHECK_THROWS_AS(backward(p, x, Matrix(2, 2)), ValidationError);
}

TEST_CASE("backward matches central differences for parameters and inputs") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<std::size_t> width(1, 16), layers(0, 2), dim(1, 6), batch(1, 4);
    const double h = 1e-6;
    double worst = 0.0;
    for (int trial = 0; trial < 30; ++trial) {
        EncoderSpec spec{dim(rng), {}, dim(rng), trial % 3 == 0 ? Activation::Relu : Activation::Tanh};
        for (std::size_t k = layers(rng); k > 0; --k) spec.hidden_dims.push_back(width(rng));
        auto p = init_encoder(spec, static_cast<std::uint64_t>(trial));
        std::normal_distribution<double> g(0.0, 0.1);
        for (auto& v : p.values) v += g(rng);
        const Matrix x = random_matrix(rng, batch(rng), spec.input_dim);
        const Matrix up = random_matrix(rng, x.rows, spec.output_dim);

        ForwardCache cache;
        encode(p, x, cache);
        const Gradients grads = backward(p, cache, up);

        const Matrix dirp = random_matrix(rng, 1, p.size());
        auto shifted = [&](double s) {
            ParamVector q = p;
            for (std::size_t k = 0; k < q.size(); ++k) q.values[k] += s * dirp.data[k];
            return contract(encode(q, x), up);
        };
        const double fd = (shifted(h) - shifted(-h)) / (2 * h);
        const double an = dot(grads.params, dirp.data);
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-3});
        worst = std::max(worst, rel);

        const Matrix dirx = random_matrix(rng, x.rows, x.cols);
        auto shifted_x = [&](double s) {
            Matrix y = x;
            for (std::size_t k = 0; k < y.data.size(); ++k) y.data[k] += s * dirx.data[k];
            return contract(encode(p, y), up);
        };
        const double fdx = (shifted_x(h) - shifted_x(-h)) / (2 * h);
        const double anx = contract(grads.input, dirx);
        worst = std::max(worst, std::abs(fdx - anx) / std::max({std::abs(fdx), std::abs(anx), 1e-3}));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("normalize_backward matches the projection Jacobian") {
    std::mt19937_64 rng(6);
    const Matrix z = random_matrix(rng, 3, 4);
    const Matrix up = random_matrix(rng, 3, 4);
    const auto n = normalize_rows(z);
    const Matrix g = normalize_backward(n, up);
    const double h = 1e-6;
    const Matrix dir = random_matrix(rng, 3, 4);
    auto f = [&](double s) {
        Matrix y = z;
        for (std::size_t k = 0; k < y.data.size(); ++k) y.data[k] += s * dir.data[k];
        return contract(normalize_rows(y).unit, up);
    };
    const double fd = (f(h) - f(-h)) / (2 * h);
    CHECK(std::abs(fd - contract(g, dir)) / std::abs(fd) < 1e-6);
}
