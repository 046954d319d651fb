#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "classkit/evalreport.hpp"

namespace classkit {

// Axes left empty are held at the base config's value and do not multiply the grid.
struct AblationGrid {
    std::vector<Weighting> weighting;
    std::vector<std::size_t> windows;
    std::vector<SeqMetric> metrics;
    std::vector<double> k_quantiles;

    bool empty() const { return weighting.empty() && windows.empty() && metrics.empty() && k_quantiles.empty(); }
    std::size_t cell_count() const;
    std::vector<std::string> axis_names() const;

    static AblationGrid full();
};

struct AblationCell {
    Weighting weighting = Weighting::Soft;
    std::size_t window = 16;
    SeqMetric metric = SeqMetric::DTW;
    double k_quantile = 0.025;

    bool operator==(const AblationCell&) const = default;
};

struct AblationEnvResult {
    Hetero hetero = Hetero::Fixed;
    std::vector<SeedResult> per_seed;
    double mean = 0.0;
    double wilson_low = 0.0;
    double wilson_high = 0.0;
    double mining_seconds = 0.0;
    double training_seconds = 0.0;
    std::uint64_t pair_count = 0;
    double threshold = 0.0;
};

struct AblationRow {
    AblationCell cell;
    std::vector<AblationEnvResult> envs;

    const AblationEnvResult& env(Hetero h) const;
};

struct AblationReport {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    Task task = Task::PointReach;
    std::vector<std::string> axes;
    std::vector<AblationRow> rows;
};

// Cells in row-major order: weighting, window, metric, K.
std::vector<AblationCell> expand_grid(const PipelineConfig& base, const AblationGrid& grid);

// Runs mine -> train -> evaluate for every cell on each environment in `modes`. Demonstrations
// are collected once per mode; pair tables are shared between cells that differ only in weighting.
AblationReport run_ablation(const PipelineConfig& base, const AblationGrid& grid, const std::vector<Hetero>& modes);

// JSON Lines: one record per (cell, mode, seed). CSV: one row per cell with a mean column per mode.
void write_ablation_jsonl(const AblationReport& report, const std::filesystem::path& path);
void write_ablation_csv(const AblationReport& report, const std::filesystem::path& path);

}  // namespace classkit
