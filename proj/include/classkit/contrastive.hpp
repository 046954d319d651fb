#pragma once

#include <optional>
#include <vector>

#include "classkit/types.hpp"

namespace classkit {

// S_ij = <z_i, z_j> / tau over unit-norm latents.
struct BatchSimilarity {
    Matrix S;
    double tau = 1.0;
};

// In-batch positive weights; symmetric, zero diagonal, entries in [0, 1].
using BatchWeights = Matrix;

struct LossReport {
    double mean_loss = 0.0;
    std::vector<std::optional<double>> per_anchor;  // empty for anchors without in-batch positives
    std::size_t active_anchor_count = 0;
};

struct AnchorDivergence {
    double kl = 0.0;
    double entropy = 0.0;
};

BatchSimilarity similarity_matrix(const Matrix& unit_latents, double tau);

// Row-wise softmax over k != i; the diagonal entry of the result is 0.
Matrix candidate_softmax(const BatchSimilarity& sim);

// Weighted log-softmax loss over positives, averaged over anchors with a nonzero weight row.
LossReport soft_infonce(const BatchSimilarity& sim, const BatchWeights& W);

// Gradient of mean_loss with respect to the unit latents used to build `sim`.
Matrix soft_infonce_grad(const BatchSimilarity& sim, const BatchWeights& W, const Matrix& unit_latents);

// Per-anchor KL(Q_i || P_i) and H(Q_i), Q_i the normalized weight row. Anchors with a
// zero weight row are reported as nullopt.
std::vector<std::optional<AnchorDivergence>> kl_decomposition(const BatchSimilarity& sim, const BatchWeights& W);

}  // namespace classkit
