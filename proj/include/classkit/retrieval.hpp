#pragma once

#include <optional>
#include <vector>

#include "classkit/demo_store.hpp"
#include "classkit/encoder.hpp"
#include "classkit/toybench.hpp"
#include "classkit/trainer.hpp"

namespace classkit {

struct QueryConfig {
    std::size_t k_nn = 64;
    double tau_nn = 0.02;

    void validate() const;
};

// Maps (obs, proprio) to the unit retrieval key. With an encoder the observation latent is
// normalized, concatenated with raw proprio, and the result normalized again; without one
// the raw (obs, proprio) concatenation is normalized.
struct Embedder {
    std::optional<ParamVector> encoder;

    std::size_t key_dim(std::size_t obs_dim, std::size_t proprio_dim) const;
    Vec embed(std::span<const double> obs, std::span<const double> proprio) const;
};

class LatentIndex {
public:
    LatentIndex() = default;
    LatentIndex(Embedder embedder, std::size_t key_dim, std::size_t horizon, std::size_t action_dim);

    void add(std::span<const double> unit_key, const ActionWindow& window);

    std::size_t size() const { return sources_.size(); }
    bool empty() const { return sources_.empty(); }
    std::size_t key_dim() const { return key_dim_; }
    std::size_t horizon() const { return horizon_; }
    std::span<const double> key(std::size_t k) const { return {keys_.data() + k * key_dim_, key_dim_}; }
    ActionWindow window(std::size_t k) const;
    const WindowIndex& source(std::size_t k) const { return sources_[k]; }
    const Embedder& embedder() const { return embedder_; }

private:
    Embedder embedder_;
    std::size_t key_dim_ = 0, horizon_ = 0, action_dim_ = 0;
    std::vector<double> keys_;
    std::vector<double> actions_;  // size() x horizon x action_dim
    std::vector<WindowIndex> sources_;
};

// One entry per timestep of every demo, keyed through the checkpoint encoder.
LatentIndex build_index(const Dataset& dataset, const Checkpoint& ckpt, std::size_t horizon, bool use_ema = true);

// Identity-encoder index over raw (obs, proprio).
LatentIndex build_raw_index(const Dataset& dataset, std::size_t horizon);

struct Neighbor {
    std::size_t entry = 0;
    double similarity = 0.0;
    double weight = 0.0;
};

// Top-k by cosine similarity (ties by ascending entry), softmax(sim / tau_nn) weights.
std::vector<Neighbor> nearest(const LatentIndex& index, std::span<const double> unit_key, const QueryConfig& cfg);

// Similarity-weighted average of the k nearest action windows.
ActionWindow query(const LatentIndex& index, std::span<const double> obs, std::span<const double> proprio,
                   const QueryConfig& cfg);
ActionWindow query_key(const LatentIndex& index, std::span<const double> unit_key, const QueryConfig& cfg);

class RetrievalPolicy : public Policy {
public:
    RetrievalPolicy(const LatentIndex& index, QueryConfig cfg) : index_(&index), cfg_(cfg) {}
    std::vector<Vec> plan(const Observation& ob, const EnvState&, std::mt19937_64&) override {
        return query(*index_, ob.obs, ob.proprio, cfg_).actions;
    }

private:
    const LatentIndex* index_;
    QueryConfig cfg_;
};

// Closed-loop episode driven by retrieval; executes the first action_horizon actions per query.
EpisodeResult rollout(const EnvConfig& env, std::uint64_t episode_seed, const LatentIndex& index,
                      const QueryConfig& cfg, std::size_t action_horizon, std::size_t max_steps);

}  // namespace classkit
