#pragma once

#include <span>
#include <string>
#include <vector>

#include "classkit/types.hpp"

namespace classkit {

enum class SeqMetric { DTW, L2 };

std::string to_string(SeqMetric m);
SeqMetric parse_metric(const std::string& s);

// Distance between two action sequences. Each step is multiplied element-wise by
// dim_scale before the Euclidean local cost is taken. An empty dim_scale means all ones.
struct SeqDistanceConfig {
    SeqMetric metric = SeqMetric::DTW;
    Vec dim_scale;

    void validate(std::size_t action_dim) const;
};

using Sequence = std::span<const Vec>;

// Classic unconstrained DTW with steps (1,0), (0,1), (1,1), anchored at both ends.
double dtw_distance(Sequence a, Sequence b, const SeqDistanceConfig& cfg);

// Index-aligned sum of per-step Euclidean distances; sequences must have equal length.
double l2_sequence_distance(Sequence a, Sequence b, const SeqDistanceConfig& cfg);

// Dispatches on cfg.metric.
double sequence_distance(Sequence a, Sequence b, const SeqDistanceConfig& cfg);

// Test oracle: enumerates every monotone boundary-anchored path. Requires |a|*|b| <= 64.
double dtw_oracle(Sequence a, Sequence b, const SeqDistanceConfig& cfg);

namespace detail {

// Both inputs are already scaled, stored row-major with `dim` values per step.
// `row` is scratch space of at least nb doubles.
double dtw_prescaled(const double* a, std::size_t na, const double* b, std::size_t nb, std::size_t dim, double* row);
double l2_prescaled(const double* a, const double* b, std::size_t n, std::size_t dim);

// Flattens and scales a sequence into `out` (row-major).
void scale_into(Sequence seq, std::span<const double> scale, std::vector<double>& out);

}  // namespace detail

}  // namespace classkit
