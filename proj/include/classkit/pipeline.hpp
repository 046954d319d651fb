#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "classkit/demo_store.hpp"
#include "classkit/pair_miner.hpp"
#include "classkit/retrieval.hpp"
#include "classkit/toybench.hpp"
#include "classkit/trainer.hpp"

namespace classkit {

enum class Weighting { Soft, Hard };

std::string to_string(Weighting w);
Weighting parse_weighting(const std::string& s);

enum class Method { ClassRetrieval, RawKnn, BcMlp, HardRetrieval };

std::string to_string(Method m);
Method parse_method(const std::string& s);

// Every knob of the collect -> mine -> train -> evaluate chain.
struct PipelineConfig {
    EnvConfig env;
    std::size_t demos = 200;
    double expert_noise = 0.005;
    std::uint64_t seed = 0;

    // mining
    std::size_t dtw_window = 16;
    SeqMetric metric = SeqMetric::DTW;
    Vec dim_scale;
    double k_quantile = 0.025;
    std::size_t exclusion_margin = 0;
    Weighting weighting = Weighting::Soft;

    // encoder / training
    std::vector<std::size_t> hidden_dims{128, 128};
    std::size_t latent_dim = 32;
    Activation activation = Activation::Tanh;
    TrainConfig train;
    std::vector<std::size_t> bc_head_dims{128};

    // evaluation
    QueryConfig query;          // tau_nn applies to heterogeneous modes
    double tau_nn_fixed = 0.01;  // tau_nn for the fixed mode
    std::size_t horizon = 16;         // T_p
    std::size_t action_horizon = 16;  // T_a
    std::size_t episodes = 50;
    std::vector<std::uint64_t> eval_seeds{0, 1, 2};
    std::vector<Method> methods{Method::ClassRetrieval, Method::RawKnn};
    std::size_t eval_every = 0;  // epochs; 0 evaluates the final checkpoint only
    std::size_t threads = 1;

    // Every violated constraint, in field order.
    std::vector<std::string> violations() const;
    void validate() const;
    EncoderSpec encoder_spec(std::size_t obs_dim) const;
    SeqDistanceConfig distance() const { return {metric, dim_scale}; }
    QueryConfig query_for(const EnvConfig& e) const;
};

struct MinedPairs {
    PairTable table;
    SoftWeights weights;  // soft weights; see weights_for
    double seconds = 0.0;
};

MinedPairs mine_dataset(const Dataset& dataset, const PipelineConfig& cfg);
SoftWeights weights_for(const MinedPairs& mined, Weighting w);

std::uint64_t collection_seed(const PipelineConfig& cfg);

// Seed used for the training run evaluated under eval seed `s`.
std::uint64_t training_seed(const PipelineConfig& cfg, std::uint64_t eval_seed);

struct TrainedModel {
    Checkpoint checkpoint;
    std::vector<double> loss_trace;
    double seconds = 0.0;
};

// Trains with cfg.weighting applied to the mined weights.
TrainedModel train_class_model(const Dataset& dataset, const MinedPairs& mined, const PipelineConfig& cfg,
                               std::uint64_t train_seed, const EpochHook& on_epoch = {});
TrainedModel train_bc_model(const Dataset& dataset, const PipelineConfig& cfg, std::uint64_t train_seed,
                            const EpochHook& on_epoch = {});

// Action chunk predicted by a BC checkpoint.
class BcPolicy : public Policy {
public:
    explicit BcPolicy(std::shared_ptr<const Checkpoint> ckpt) : ckpt_(std::move(ckpt)) {}
    std::vector<Vec> plan(const Observation& ob, const EnvState&, std::mt19937_64&) override;

private:
    std::shared_ptr<const Checkpoint> ckpt_;
};

// Retrieval policy that owns its index.
class OwningRetrievalPolicy : public Policy {
public:
    OwningRetrievalPolicy(std::shared_ptr<const LatentIndex> index, QueryConfig cfg)
        : index_(std::move(index)), inner_(*index_, cfg) {}
    std::vector<Vec> plan(const Observation& ob, const EnvState& s, std::mt19937_64& rng) override {
        return inner_.plan(ob, s, rng);
    }

private:
    std::shared_ptr<const LatentIndex> index_;
    RetrievalPolicy inner_;
};

}  // namespace classkit
