#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "classkit/pipeline.hpp"

namespace classkit {

// Identity-encoder retrieval over (obs, proprio); the index is built once and shared.
PolicyFactory raw_knn_controller(const Dataset& dataset, const QueryConfig& cfg, std::size_t horizon);

// Retrieval over a trained encoder's EMA latents.
PolicyFactory class_controller(const Dataset& dataset, const Checkpoint& ckpt, const QueryConfig& cfg, std::size_t horizon);

PolicyFactory bc_controller(const Checkpoint& ckpt);

// Hash of the initial scenes of one seed; equal across methods when evaluation is paired.
std::uint64_t scene_hash(const std::vector<EnvState>& initial_states);

struct StageTimings {
    double collect = 0.0;
    double mining = 0.0;
    double training = 0.0;
    double inference = 0.0;

    bool operator==(const StageTimings&) const = default;
};

struct SeedResult {
    std::uint64_t seed = 0;
    double success_rate = 0.0;  // reported value: final, or best with eval_every
    std::size_t successes = 0;
    std::size_t episodes = 0;
    std::uint64_t scene_hash = 0;
    double final_success_rate = 0.0;
    std::optional<std::size_t> best_epoch;

    bool operator==(const SeedResult&) const = default;
};

struct ComparisonRow {
    Method method = Method::ClassRetrieval;
    Task task = Task::PointReach;
    Hetero hetero = Hetero::Fixed;
    std::vector<SeedResult> per_seed;
    double mean = 0.0;
    double wilson_low = 0.0;
    double wilson_high = 0.0;
    StageTimings timings;

    bool operator==(const ComparisonRow&) const = default;
};

struct ComparisonReport {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::vector<ComparisonRow> rows;

    const ComparisonRow& row(Method m, Hetero h) const;
    bool operator==(const ComparisonReport&) const = default;
};

// Demonstrations and mined pairs for one environment configuration.
struct PreparedData {
    EnvConfig env;
    Dataset dataset;
    MinedPairs mined;
    double collect_seconds = 0.0;
};

PreparedData prepare_data(const PipelineConfig& cfg, const EnvConfig& env, bool mine = true);

// Trains (where needed) and evaluates one method under every eval seed of cfg.
ComparisonRow run_method(const PipelineConfig& cfg, const PreparedData& data, Method method);

// Fills mean and the pooled Wilson interval from per_seed.
void summarize(ComparisonRow& row);

// Each environment's data is collected and mined once and shared by all methods.
ComparisonReport compare(const PipelineConfig& cfg, const std::vector<Method>& methods, const std::vector<EnvConfig>& envs);

// Evaluates a fixed controller (e.g. a loaded checkpoint) under every eval seed of cfg.
ComparisonRow evaluate_controller(const PipelineConfig& cfg, const EnvConfig& env, Method method,
                                  const PolicyFactory& factory);

// One JSON record per (row, seed); the CSV carries the same columns. Both are a pure function
// of config and seed, so wall-clock timings go to a separate file.
void write_report_jsonl(const ComparisonReport& report, const std::filesystem::path& path);
void write_report_csv(const ComparisonReport& report, const std::filesystem::path& path);
void write_timings_jsonl(const ComparisonReport& report, const std::filesystem::path& path);

// Timings are not part of the report file and load as zero.
ComparisonReport load_report_jsonl(const std::filesystem::path& path);

}  // namespace classkit
