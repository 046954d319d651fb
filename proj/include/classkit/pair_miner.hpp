#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "classkit/demo_store.hpp"
#include "classkit/dtw.hpp"

namespace classkit {

struct PairRecord {
    std::uint64_t i = 0;
    std::uint64_t j = 0;  // i < j
    double dist = 0.0;
    bool operator==(const PairRecord&) const = default;
};

// Positive pairs retained under the quantile threshold, sorted by (i, j).
struct PairTable {
    std::uint64_t window_count = 0;
    std::vector<PairRecord> pairs;
    double threshold = 0.0;
    std::string metric_tag;
    double k_quantile = 1.0;
    std::uint64_t eligible_count = 0;

    void validate() const;
};

// Sorted positive-pair distances; the empirical CDF uses mid-rank tie handling.
struct CdfModel {
    std::vector<double> sorted_dists;

    double cdf(double x) const;
};

// Symmetric lookup w(i, j); pairs absent from the table weigh 0.
class SoftWeights {
public:
    SoftWeights() = default;
    explicit SoftWeights(std::uint64_t window_count) : adjacency_(window_count) {}

    void set(std::uint64_t i, std::uint64_t j, double w);
    double weight(std::uint64_t i, std::uint64_t j) const;

    // Neighbours of i sorted by ordinal.
    const std::vector<std::pair<std::uint64_t, double>>& positives(std::uint64_t i) const { return adjacency_.at(i); }
    std::uint64_t window_count() const { return adjacency_.size(); }

    // Replaces every stored weight with 1 (hard positives).
    SoftWeights hardened() const;

private:
    std::vector<std::vector<std::pair<std::uint64_t, double>>> adjacency_;
};

struct MiningOptions {
    SeqDistanceConfig distance;
    double k_quantile = 0.025;
    std::size_t exclusion_margin = 0;
    std::size_t threads = 1;
};

// Distances over every eligible unordered pair; keeps pairs at or below the
// nearest-rank K-quantile. Windows may carry any horizon.
PairTable mine_pairs(const std::vector<ActionWindow>& windows, const MiningOptions& opts);

CdfModel fit_cdf(const PairTable& table);
double soft_weight(double dist, const CdfModel& cdf);
SoftWeights build_soft_weights(const PairTable& table, const CdfModel& cdf);

// Little-endian binary: magic, u32 version, u64 window_count, f64 threshold,
// u64 pair count, then (u64 i, u64 j, f64 dist, f64 weight) records.
void save_pair_table(const PairTable& table, const SoftWeights& weights, const std::filesystem::path& path);

struct LoadedPairs {
    PairTable table;
    SoftWeights weights;
};
LoadedPairs load_pair_table(const std::filesystem::path& path);

// Nearest-rank quantile of an unsorted sample: the ceil(q*n)-th smallest value.
double nearest_rank_quantile(std::vector<double> values, double q);

}  // namespace classkit
