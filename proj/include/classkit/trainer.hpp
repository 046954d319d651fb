#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "classkit/contrastive.hpp"
#include "classkit/demo_store.hpp"
#include "classkit/encoder.hpp"
#include "classkit/pair_miner.hpp"

namespace classkit {

enum class OptimizerKind { LARS, SGD };

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

struct TrainConfig {
    std::size_t batch_size = 64;
    double learning_rate = 0.4;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    double tau = 0.05;
    std::size_t epochs = 200;
    std::size_t warmup_steps = 500;
    double grad_clip_norm = 0.5;
    double ema_power = 0.75;
    std::uint64_t seed = 0;
    OptimizerKind optimizer = OptimizerKind::LARS;
    double trust_coeff = 0.001;
    AugmentConfig augment;
    std::size_t window_stride = 1;

    void validate() const;
    // Stable textual form; hashed into checkpoints.
    std::string canonical() const;
    std::uint64_t hash() const { return fnv1a64(canonical()); }
};

// Regression head stacked on [latent, proprio] for the behaviour-cloning baseline.
struct HeadState {
    ParamVector params;
    ParamVector ema;
    Vec velocity;
    std::uint64_t horizon = 0;
    std::uint64_t action_dim = 0;
    bool operator==(const HeadState&) const = default;
};

struct Checkpoint {
    ParamVector params;
    ParamVector ema;
    Vec velocity;  // optimizer momentum buffer
    std::uint64_t step = 0;
    std::uint64_t config_hash = 0;
    std::optional<HeadState> head;

    const EncoderSpec& spec() const { return params.spec; }
    bool operator==(const Checkpoint&) const = default;
};

struct Batch {
    std::vector<std::size_t> ordinals;
    Matrix obs;
    BatchWeights weights;
};

// B/2 anchors drawn without replacement; each contributes one of its table positives
// when possible, remaining slots are uniform fillers. Ordinals within a batch are distinct.
Batch build_batch(const Dataset& dataset, std::span<const WindowIndex> windows, const SoftWeights& weights,
                  std::size_t batch_size, std::mt19937_64& rng);

struct OptimizerOptions {
    double lr = 0.4;
    double momentum = 0.9;
    double weight_decay = 1e-6;
    double trust_coeff = 0.001;
    double eps = 1e-9;
};

// Layer-wise adaptive rate scaling over (weight, bias) groups of each layer.
void lars_step(ParamVector& params, std::span<const double> grads, Vec& velocity, const OptimizerOptions& opt);
void sgd_step(ParamVector& params, std::span<const double> grads, Vec& velocity, const OptimizerOptions& opt);

// d = min(1 - (1 + step)^(-power), 0.9999)
double ema_decay(std::uint64_t step, double power);
void ema_update(ParamVector& ema, const ParamVector& params, std::uint64_t step, double power);

// Linear warmup to base_lr, then cosine decay to zero at total_steps. step counts from 1.
double scheduled_lr(std::size_t step, std::size_t total_steps, double base_lr, std::size_t warmup);

// Rescales grads in place so the joint norm is <= max_norm; returns the pre-clip norm.
double clip_global_norm(std::span<double> grads, double max_norm);

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> loss_trace;  // per optimizer step
};

using StepLogger = std::function<void(std::size_t step, double loss, double lr)>;
using EpochHook = std::function<void(std::size_t epoch, const Checkpoint& snapshot)>;

TrainResult train_class(const Dataset& dataset, const PairTable& table, const SoftWeights& weights,
                        const EncoderSpec& spec, const TrainConfig& cfg, const StepLogger& log = {},
                        const EpochHook& on_epoch = {});

TrainResult train_bc(const Dataset& dataset, const EncoderSpec& spec, const std::vector<std::size_t>& head_dims,
                     std::size_t horizon, const TrainConfig& cfg, const StepLogger& log = {},
                     const EpochHook& on_epoch = {});

// Flattened action window predicted by a BC checkpoint (EMA weights unless use_ema is false).
Vec bc_predict(const Checkpoint& ckpt, std::span<const double> obs, std::span<const double> proprio, bool use_ema = true);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);

struct LoadedCheckpoint {
    Checkpoint checkpoint;
    std::vector<std::string> warnings;
};

// A config-hash mismatch against `expected_hash` is reported as a warning.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash = {});

}  // namespace classkit
