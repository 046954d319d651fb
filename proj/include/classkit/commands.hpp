#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "classkit/pipeline.hpp"

namespace classkit {

// Flag values shared by every subcommand; unset values leave the config document alone.
struct CliOptions {
    std::optional<std::filesystem::path> config;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out = "classkit_out";
    std::optional<std::size_t> threads;
    std::optional<double> k_quantile;
    std::optional<std::size_t> window;
    std::optional<std::string> metric;
    std::optional<std::string> weighting;
    std::optional<std::string> hetero;
    std::optional<std::size_t> eval_every;
    std::vector<std::string> axes;  // ablate: weighting, window, metric, k_quantile
    std::size_t diag_batches = 4;
};

// Precedence: defaults < config document < env seed < flags. `env_seed` is the value of
// CLASSKIT_SEED, if set.
PipelineConfig resolve_config(const CliOptions& opts, const char* env_seed);

// Artifact file names inside the output directory.
namespace artifact {
inline constexpr const char* dataset = "dataset.jsonl";
inline constexpr const char* pairs = "pairs.bin";
inline constexpr const char* encoder = "encoder.ckpt";
inline constexpr const char* encoder_hard = "encoder_hard.ckpt";
inline constexpr const char* bc = "bc.ckpt";
inline constexpr const char* eval_jsonl = "eval.jsonl";
inline constexpr const char* eval_csv = "eval.csv";
inline constexpr const char* eval_timings = "eval_timings.jsonl";
inline constexpr const char* ablation_jsonl = "ablation.jsonl";
inline constexpr const char* ablation_csv = "ablation.csv";
inline constexpr const char* diag_kl = "diag_kl.jsonl";
inline constexpr const char* embeddings = "embeddings.csv";
}  // namespace artifact

// Sidecar written next to every artifact: <name>.meta.json.
std::filesystem::path meta_path(const std::filesystem::path& artifact);

struct CommandResult {
    std::vector<std::filesystem::path> written;
    std::vector<std::string> warnings;
};

CommandResult cmd_collect(const PipelineConfig& cfg, const std::filesystem::path& out);
CommandResult cmd_mine(const PipelineConfig& cfg, const std::filesystem::path& out);
CommandResult cmd_train(const PipelineConfig& cfg, const std::filesystem::path& out);
CommandResult cmd_train_bc(const PipelineConfig& cfg, const std::filesystem::path& out);
CommandResult cmd_eval(const PipelineConfig& cfg, const std::filesystem::path& out);
CommandResult cmd_ablate(const PipelineConfig& cfg, const std::filesystem::path& out, const std::vector<std::string>& axes);
CommandResult cmd_diag_kl(const PipelineConfig& cfg, const std::filesystem::path& out, std::size_t batches);
CommandResult cmd_export_embeddings(const PipelineConfig& cfg, const std::filesystem::path& out);

const std::vector<std::string>& command_names();

// Resolves the config, runs `name`, and maps errors to exit codes: 0 success,
// 1 validation error (bad config, missing artifact), 2 runtime failure.
int run_command(const std::string& name, const CliOptions& opts, const char* env_seed, std::ostream& out,
                std::ostream& err);

}  // namespace classkit
