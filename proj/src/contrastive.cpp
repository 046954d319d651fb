#include "classkit/contrastive.hpp"

#include <algorithm>
#include <limits>

namespace classkit {

BatchSimilarity similarity_matrix(const Matrix& unit_latents, double tau) {
    if (!(tau > 0.0)) throw ValidationError("temperature must be > 0");
    if (unit_latents.rows < 2) throw ValidationError("similarity batch needs at least 2 rows");
    for (std::size_t r = 0; r < unit_latents.rows; ++r)
        if (std::abs(norm2(unit_latents.row(r)) - 1.0) > 1e-6)
            throw ValidationError("similarity input row " + std::to_string(r) + " is not unit norm");
    const std::size_t B = unit_latents.rows;
    BatchSimilarity sim{Matrix(B, B), tau};
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = i; j < B; ++j) {
            const double s = dot(unit_latents.row(i), unit_latents.row(j)) / tau;
            sim.S(i, j) = s;
            sim.S(j, i) = s;
        }
    return sim;
}

namespace {

void check_shapes(const BatchSimilarity& sim, const BatchWeights& W) {
    if (sim.S.rows != sim.S.cols || sim.S.rows < 2) throw ValidationError("similarity matrix must be square, B >= 2");
    if (W.rows != sim.S.rows || W.cols != sim.S.cols) throw ValidationError("weight matrix shape mismatch");
    for (std::size_t i = 0; i < W.rows; ++i)
        for (std::size_t j = 0; j < W.cols; ++j) {
            const double w = W(i, j);
            if (!(w >= 0.0) || !std::isfinite(w)) throw ValidationError("weights must be finite and nonnegative");
            if (i == j && w != 0.0) throw ValidationError("weight matrix must have a zero diagonal");
        }
}

double row_weight(const BatchWeights& W, std::size_t i) {
    double z = 0.0;
    for (std::size_t j = 0; j < W.cols; ++j) z += W(i, j);
    return z;
}

// log sum_{k != i} exp(S_ik), max-subtracted.
double log_partition(const Matrix& S, std::size_t i) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < S.cols; ++k)
        if (k != i) m = std::max(m, S(i, k));
    double acc = 0.0;
    for (std::size_t k = 0; k < S.cols; ++k)
        if (k != i) acc += std::exp(S(i, k) - m);
    return m + std::log(acc);
}

}  // namespace

Matrix candidate_softmax(const BatchSimilarity& sim) {
    const auto& S = sim.S;
    Matrix P(S.rows, S.cols);
    for (std::size_t i = 0; i < S.rows; ++i) {
        const double lz = log_partition(S, i);
        for (std::size_t j = 0; j < S.cols; ++j) P(i, j) = j == i ? 0.0 : std::exp(S(i, j) - lz);
    }
    return P;
}

LossReport soft_infonce(const BatchSimilarity& sim, const BatchWeights& W) {
    check_shapes(sim, W);
    const auto& S = sim.S;
    const std::size_t B = S.rows;
    LossReport rep;
    rep.per_anchor.assign(B, std::nullopt);
    double total = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const double z = row_weight(W, i);
        if (z <= 0.0) continue;
        const double lz = log_partition(S, i);
        double acc = 0.0;
        for (std::size_t j = 0; j < B; ++j)
            if (j != i && W(i, j) > 0.0) acc += W(i, j) * (S(i, j) - lz);
        const double loss = -acc / z;
        rep.per_anchor[i] = loss;
        total += loss;
        ++rep.active_anchor_count;
    }
    if (rep.active_anchor_count == 0) throw ValidationError("soft InfoNCE: every weight row is zero");
    rep.mean_loss = total / static_cast<double>(rep.active_anchor_count);
    return rep;
}

Matrix soft_infonce_grad(const BatchSimilarity& sim, const BatchWeights& W, const Matrix& unit_latents) {
    check_shapes(sim, W);
    const auto& S = sim.S;
    const std::size_t B = S.rows;
    if (unit_latents.rows != B) throw ValidationError("latent batch size mismatch");

    // dL/dS_ij = (p_ij - q_ij) / A for active anchors i, j != i.
    Matrix G(B, B);
    std::size_t active = 0;
    for (std::size_t i = 0; i < B; ++i) {
        const double z = row_weight(W, i);
        if (z <= 0.0) continue;
        ++active;
        const double lz = log_partition(S, i);
        for (std::size_t j = 0; j < B; ++j)
            if (j != i) G(i, j) = std::exp(S(i, j) - lz) - W(i, j) / z;
    }
    if (active == 0) throw ValidationError("soft InfoNCE: every weight row is zero");

    const double scale = 1.0 / (static_cast<double>(active) * sim.tau);
    Matrix grad(B, unit_latents.cols);
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < B; ++j) {
            const double g = G(i, j) + G(j, i);
            if (g == 0.0) continue;
            for (std::size_t c = 0; c < grad.cols; ++c) grad(i, c) += scale * g * unit_latents(j, c);
        }
    return grad;
}

std::vector<std::optional<AnchorDivergence>> kl_decomposition(const BatchSimilarity& sim, const BatchWeights& W) {
    check_shapes(sim, W);
    const auto& S = sim.S;
    const std::size_t B = S.rows;
    std::vector<std::optional<AnchorDivergence>> out(B);
    for (std::size_t i = 0; i < B; ++i) {
        const double z = row_weight(W, i);
        if (z <= 0.0) continue;
        const double lz = log_partition(S, i);
        AnchorDivergence d;
        for (std::size_t j = 0; j < B; ++j) {
            if (j == i || W(i, j) <= 0.0) continue;
            const double q = W(i, j) / z;
            const double log_q = std::log(q);
            const double log_p = S(i, j) - lz;
            d.kl += q * (log_q - log_p);
            d.entropy -= q * log_q;
        }
        out[i] = d;
    }
    return out;
}

}  // namespace classkit
