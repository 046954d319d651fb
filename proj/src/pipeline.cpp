#include "classkit/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace classkit {

std::string to_string(Weighting w) { return w == Weighting::Soft ? "soft" : "hard"; }

Weighting parse_weighting(const std::string& s) {
    if (s == "soft") return Weighting::Soft;
    if (s == "hard") return Weighting::Hard;
    throw ValidationError("unknown weighting '" + s + "' (expected soft|hard)");
}

std::string to_string(Method m) {
    switch (m) {
        case Method::ClassRetrieval: return "class_retrieval";
        case Method::RawKnn: return "raw_knn";
        case Method::BcMlp: return "bc_mlp";
        case Method::HardRetrieval: return "hard_retrieval";
    }
    return "class_retrieval";
}

Method parse_method(const std::string& s) {
    if (s == "class_retrieval") return Method::ClassRetrieval;
    if (s == "raw_knn") return Method::RawKnn;
    if (s == "bc_mlp") return Method::BcMlp;
    if (s == "hard_retrieval") return Method::HardRetrieval;
    throw ValidationError("unknown method '" + s + "' (expected class_retrieval|raw_knn|bc_mlp|hard_retrieval)");
}

std::vector<std::string> PipelineConfig::violations() const {
    std::vector<std::string> v;
    auto need = [&](bool ok, const char* msg) {
        if (!ok) v.emplace_back(msg);
    };
    need(env.dyn_rot_rate > 0.0, "env.dyn_rot_rate must be > 0");
    need(env.success_radius > 0.0, "env.success_radius must be > 0");
    need(env.action_clip > 0.0, "env.action_clip must be > 0");
    need(env.max_steps > 0, "env.max_steps must be > 0");
    need(env.agent_radius > 0.0 && env.block_radius > 0.0, "env disc radii must be > 0");
    need(demos > 0, "collect.demos must be >= 1");
    need(expert_noise >= 0.0, "collect.expert_noise must be >= 0");
    need(dtw_window > 0, "mining.window must be >= 1");
    need(k_quantile > 0.0 && k_quantile <= 1.0, "mining.k_quantile must lie in (0, 1]");
    need(std::all_of(dim_scale.begin(), dim_scale.end(), [](double x) { return x > 0.0 && std::isfinite(x); }),
         "mining.dim_scale entries must be positive");
    need(dim_scale.empty() || dim_scale.size() == env.action_dim(), "mining.dim_scale length must match the action dimension");
    need(std::all_of(hidden_dims.begin(), hidden_dims.end(), [](std::size_t d) { return d > 0; }),
         "encoder.hidden_dims entries must be >= 1");
    need(latent_dim > 0, "encoder.latent_dim must be >= 1");
    need(train.batch_size >= 2, "train.batch_size must be >= 2");
    need(train.learning_rate > 0.0, "train.learning_rate must be > 0");
    need(train.momentum >= 0.0 && train.momentum < 1.0, "train.momentum must lie in [0, 1)");
    need(train.weight_decay >= 0.0, "train.weight_decay must be >= 0");
    need(train.tau > 0.0, "train.tau must be > 0");
    need(train.grad_clip_norm > 0.0, "train.grad_clip_norm must be > 0");
    need(train.ema_power > 0.0 && train.ema_power <= 1.0, "train.ema_power must lie in (0, 1]");
    need(train.trust_coeff > 0.0, "train.trust_coeff must be > 0");
    need(train.window_stride > 0, "train.window_stride must be >= 1");
    need(train.augment.noise_sigma >= 0.0, "train.augment.noise_sigma must be >= 0");
    need(train.augment.mask_prob >= 0.0 && train.augment.mask_prob < 1.0, "train.augment.mask_prob must lie in [0, 1)");
    need(std::all_of(bc_head_dims.begin(), bc_head_dims.end(), [](std::size_t d) { return d > 0; }),
         "bc.head_dims entries must be >= 1");
    need(query.k_nn > 0, "eval.k_nn must be >= 1");
    need(query.tau_nn > 0.0, "eval.tau_nn must be > 0");
    need(tau_nn_fixed > 0.0, "eval.tau_nn_fixed must be > 0");
    need(horizon > 0, "eval.horizon must be >= 1");
    need(action_horizon > 0 && action_horizon <= horizon, "eval.action_horizon must lie in [1, horizon]");
    need(episodes > 0, "eval.episodes must be >= 1");
    need(!eval_seeds.empty(), "eval.seeds must not be empty");
    need(!methods.empty(), "eval.methods must not be empty");
    need(threads > 0, "threads must be >= 1");
    return v;
}

void PipelineConfig::validate() const {
    const auto v = violations();
    if (v.empty()) return;
    std::string msg = "invalid configuration:";
    for (const auto& e : v) msg += "\n  - " + e;
    throw ValidationError(msg);
}

QueryConfig PipelineConfig::query_for(const EnvConfig& e) const {
    QueryConfig q = query;
    if (e.hetero == Hetero::Fixed) q.tau_nn = tau_nn_fixed;
    return q;
}

EncoderSpec PipelineConfig::encoder_spec(std::size_t obs_dim) const {
    return EncoderSpec{obs_dim, hidden_dims, latent_dim, activation};
}

MinedPairs mine_dataset(const Dataset& dataset, const PipelineConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto windows = enumerate_windows(dataset, cfg.dtw_window, cfg.train.window_stride);
    MiningOptions opts{cfg.distance(), cfg.k_quantile, cfg.exclusion_margin, cfg.threads};
    MinedPairs m;
    m.table = mine_pairs(windows, opts);
    m.weights = build_soft_weights(m.table, fit_cdf(m.table));
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
}

SoftWeights weights_for(const MinedPairs& mined, Weighting w) {
    return w == Weighting::Hard ? mined.weights.hardened() : mined.weights;
}

std::uint64_t collection_seed(const PipelineConfig& cfg) { return derive_seed(cfg.seed, 0xC011EC7); }

std::uint64_t training_seed(const PipelineConfig& cfg, std::uint64_t eval_seed) {
    return derive_seed(cfg.seed, eval_seed, 0x7A1);
}

TrainedModel train_class_model(const Dataset& dataset, const MinedPairs& mined, const PipelineConfig& cfg,
                               std::uint64_t train_seed, const EpochHook& on_epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig tc = cfg.train;
    tc.seed = train_seed;
    auto res = train_class(dataset, mined.table, weights_for(mined, cfg.weighting), cfg.encoder_spec(dataset.obs_dim()), tc,
                           {}, on_epoch);
    return {std::move(res.checkpoint), std::move(res.loss_trace),
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

TrainedModel train_bc_model(const Dataset& dataset, const PipelineConfig& cfg, std::uint64_t train_seed,
                            const EpochHook& on_epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    TrainConfig tc = cfg.train;
    tc.seed = train_seed;
    auto res = train_bc(dataset, cfg.encoder_spec(dataset.obs_dim()), cfg.bc_head_dims, cfg.horizon, tc, {}, on_epoch);
    return {std::move(res.checkpoint), std::move(res.loss_trace),
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
}

std::vector<Vec> BcPolicy::plan(const Observation& ob, const EnvState&, std::mt19937_64&) {
    const Vec flat = bc_predict(*ckpt_, ob.obs, ob.proprio);
    const std::size_t adim = ckpt_->head->action_dim;
    std::vector<Vec> chunk;
    for (std::size_t s = 0; s < ckpt_->head->horizon; ++s)
        chunk.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(s * adim),
                           flat.begin() + static_cast<std::ptrdiff_t>((s + 1) * adim));
    return chunk;
}

}  // namespace classkit
