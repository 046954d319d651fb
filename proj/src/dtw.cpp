#include "classkit/dtw.hpp"

#include <algorithm>
#include <limits>

namespace classkit {

std::string to_string(SeqMetric m) { return m == SeqMetric::DTW ? "dtw" : "l2"; }

SeqMetric parse_metric(const std::string& s) {
    if (s == "dtw" || s == "DTW") return SeqMetric::DTW;
    if (s == "l2" || s == "L2") return SeqMetric::L2;
    throw ValidationError("unknown sequence metric '" + s + "' (expected dtw|l2)");
}

void SeqDistanceConfig::validate(std::size_t action_dim) const {
    if (dim_scale.empty()) return;
    if (dim_scale.size() != action_dim)
        throw ValidationError("dim_scale has " + std::to_string(dim_scale.size()) + " entries, actions have " +
                              std::to_string(action_dim));
    for (double s : dim_scale)
        if (!std::isfinite(s) || s <= 0.0) throw ValidationError("dim_scale entries must be finite and > 0");
}

namespace {

std::size_t check_pair(Sequence a, Sequence b, const SeqDistanceConfig& cfg) {
    if (a.empty() || b.empty()) throw ValidationError("sequence distance needs nonempty sequences");
    const std::size_t dim = a.front().size();
    for (const auto& v : a)
        if (v.size() != dim) throw ValidationError("inconsistent step dimension in first sequence");
    for (const auto& v : b)
        if (v.size() != dim) throw ValidationError("dimension mismatch between sequences");
    cfg.validate(dim);
    return dim;
}

inline double local_cost(const double* x, const double* y, std::size_t dim) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) {
        const double d = x[k] - y[k];
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

namespace detail {

void scale_into(Sequence seq, std::span<const double> scale, std::vector<double>& out) {
    out.clear();
    for (const auto& v : seq)
        for (std::size_t k = 0; k < v.size(); ++k) out.push_back(scale.empty() ? v[k] : v[k] * scale[k]);
}

double dtw_prescaled(const double* a, std::size_t na, const double* b, std::size_t nb, std::size_t dim, double* row) {
    // row[j] holds the cumulative cost of the previous DP row; rolled in place.
    double acc = 0.0;
    for (std::size_t j = 0; j < nb; ++j) {
        acc += local_cost(a, b + j * dim, dim);
        row[j] = acc;
    }
    for (std::size_t i = 1; i < na; ++i) {
        const double* ai = a + i * dim;
        double diag = row[0];
        row[0] += local_cost(ai, b, dim);
        for (std::size_t j = 1; j < nb; ++j) {
            const double up = row[j];
            const double best = std::min({diag, up, row[j - 1]});
            row[j] = best + local_cost(ai, b + j * dim, dim);
            diag = up;
        }
    }
    return row[nb - 1];
}

double l2_prescaled(const double* a, const double* b, std::size_t n, std::size_t dim) {
    double s = 0.0;
    for (std::size_t t = 0; t < n; ++t) s += local_cost(a + t * dim, b + t * dim, dim);
    return s;
}

}  // namespace detail

double dtw_distance(Sequence a, Sequence b, const SeqDistanceConfig& cfg) {
    const std::size_t dim = check_pair(a, b, cfg);
    std::vector<double> fa, fb;
    detail::scale_into(a, cfg.dim_scale, fa);
    detail::scale_into(b, cfg.dim_scale, fb);
    std::vector<double> row(b.size());
    return detail::dtw_prescaled(fa.data(), a.size(), fb.data(), b.size(), dim, row.data());
}

double l2_sequence_distance(Sequence a, Sequence b, const SeqDistanceConfig& cfg) {
    const std::size_t dim = check_pair(a, b, cfg);
    if (a.size() != b.size())
        throw ValidationError("L2 sequence distance needs equal lengths (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    std::vector<double> fa, fb;
    detail::scale_into(a, cfg.dim_scale, fa);
    detail::scale_into(b, cfg.dim_scale, fb);
    return detail::l2_prescaled(fa.data(), fb.data(), a.size(), dim);
}

double sequence_distance(Sequence a, Sequence b, const SeqDistanceConfig& cfg) {
    return cfg.metric == SeqMetric::DTW ? dtw_distance(a, b, cfg) : l2_sequence_distance(a, b, cfg);
}

namespace {

struct PathSearch {
    Sequence a, b;
    std::span<const double> scale;
    double best = std::numeric_limits<double>::infinity();

    double cost(std::size_t i, std::size_t j) const {
        double s = 0.0;
        for (std::size_t k = 0; k < a[i].size(); ++k) {
            const double w = scale.empty() ? 1.0 : scale[k];
            const double d = a[i][k] * w - b[j][k] * w;
            s += d * d;
        }
        return std::sqrt(s);
    }

    // Walks one complete path at a time; the path cost is summed only at the end.
    void walk(std::vector<std::pair<std::size_t, std::size_t>>& path) {
        const auto [i, j] = path.back();
        if (i + 1 == a.size() && j + 1 == b.size()) {
            double total = 0.0;
            for (const auto& [p, q] : path) total += cost(p, q);
            best = std::min(best, total);
            return;
        }
        const std::pair<std::size_t, std::size_t> moves[] = {{i + 1, j}, {i, j + 1}, {i + 1, j + 1}};
        for (const auto& m : moves) {
            if (m.first >= a.size() || m.second >= b.size()) continue;
            path.push_back(m);
            walk(path);
            path.pop_back();
        }
    }
};

}  // namespace

double dtw_oracle(Sequence a, Sequence b, const SeqDistanceConfig& cfg) {
    check_pair(a, b, cfg);
    if (a.size() * b.size() > 64) throw ValidationError("dtw_oracle limited to |A|*|B| <= 64");
    PathSearch search{a, b, cfg.dim_scale};
    std::vector<std::pair<std::size_t, std::size_t>> path{{0, 0}};
    search.walk(path);
    return search.best;
}

}  // namespace classkit
