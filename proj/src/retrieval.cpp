#include "classkit/retrieval.hpp"

#include <algorithm>
#include <limits>

namespace classkit {

void QueryConfig::validate() const {
    if (k_nn == 0) throw ValidationError("k_nn must be >= 1");
    if (!(tau_nn > 0.0)) throw ValidationError("tau_nn must be > 0");
}

std::size_t Embedder::key_dim(std::size_t obs_dim, std::size_t proprio_dim) const {
    return (encoder ? encoder->spec.output_dim : obs_dim) + proprio_dim;
}

Vec Embedder::embed(std::span<const double> obs, std::span<const double> proprio) const {
    Vec key;
    if (encoder) {
        Matrix in(1, obs.size());
        std::copy(obs.begin(), obs.end(), in.data.begin());
        key = normalize(encode(*encoder, in).data);
    } else {
        key.assign(obs.begin(), obs.end());
    }
    key.insert(key.end(), proprio.begin(), proprio.end());
    return normalize(key);
}

LatentIndex::LatentIndex(Embedder embedder, std::size_t key_dim, std::size_t horizon, std::size_t action_dim)
    : embedder_(std::move(embedder)), key_dim_(key_dim), horizon_(horizon), action_dim_(action_dim) {}

void LatentIndex::add(std::span<const double> unit_key, const ActionWindow& window) {
    if (unit_key.size() != key_dim_) throw ValidationError("index key dimension mismatch");
    if (std::abs(norm2(unit_key) - 1.0) > 1e-9) throw ValidationError("index keys must be unit norm");
    if (window.actions.size() != horizon_) throw ValidationError("index window horizon mismatch");
    keys_.insert(keys_.end(), unit_key.begin(), unit_key.end());
    for (const auto& a : window.actions) {
        if (a.size() != action_dim_) throw ValidationError("index action dimension mismatch");
        actions_.insert(actions_.end(), a.begin(), a.end());
    }
    sources_.push_back(window.index);
}

ActionWindow LatentIndex::window(std::size_t k) const {
    ActionWindow w{sources_.at(k), {}};
    const double* base = actions_.data() + k * horizon_ * action_dim_;
    for (std::size_t s = 0; s < horizon_; ++s) w.actions.emplace_back(base + s * action_dim_, base + (s + 1) * action_dim_);
    return w;
}

namespace {

LatentIndex build_with(const Dataset& dataset, Embedder embedder, std::size_t horizon) {
    if (dataset.empty()) throw ValidationError("cannot index an empty dataset");
    if (embedder.encoder && embedder.encoder->spec.input_dim != dataset.obs_dim())
        throw ValidationError("encoder input_dim " + std::to_string(embedder.encoder->spec.input_dim) +
                              " does not match observation dim " + std::to_string(dataset.obs_dim()));
    const std::size_t kd = embedder.key_dim(dataset.obs_dim(), dataset.proprio_dim());
    LatentIndex index(embedder, kd, horizon, dataset.action_dim());
    for (std::size_t d = 0; d < dataset.size(); ++d)
        for (std::size_t t = 0; t < dataset.demos[d].length(); ++t) {
            const auto [obs, prop] = observation_at(dataset, {d, t});
            index.add(index.embedder().embed(obs, prop), action_window(dataset, {d, t}, horizon));
        }
    return index;
}

}  // namespace

LatentIndex build_index(const Dataset& dataset, const Checkpoint& ckpt, std::size_t horizon, bool use_ema) {
    return build_with(dataset, Embedder{use_ema ? ckpt.ema : ckpt.params}, horizon);
}

LatentIndex build_raw_index(const Dataset& dataset, std::size_t horizon) { return build_with(dataset, Embedder{}, horizon); }

std::vector<Neighbor> nearest(const LatentIndex& index, std::span<const double> unit_key, const QueryConfig& cfg) {
    cfg.validate();
    if (index.empty()) throw ValidationError("query on an empty index");
    if (cfg.k_nn > index.size())
        throw ValidationError("k_nn " + std::to_string(cfg.k_nn) + " exceeds index size " + std::to_string(index.size()));
    if (unit_key.size() != index.key_dim()) throw ValidationError("query key dimension mismatch");

    std::vector<Neighbor> all(index.size());
    for (std::size_t k = 0; k < index.size(); ++k) all[k] = {k, dot(index.key(k), unit_key), 0.0};
    auto better = [](const Neighbor& a, const Neighbor& b) {
        return a.similarity != b.similarity ? a.similarity > b.similarity : a.entry < b.entry;
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(cfg.k_nn), all.end(), better);
    all.resize(cfg.k_nn);

    const double top = all.front().similarity / cfg.tau_nn;
    double z = 0.0;
    for (auto& n : all) {
        n.weight = std::exp(n.similarity / cfg.tau_nn - top);
        z += n.weight;
    }
    for (auto& n : all) n.weight /= z;
    return all;
}

ActionWindow query_key(const LatentIndex& index, std::span<const double> unit_key, const QueryConfig& cfg) {
    const auto nn = nearest(index, unit_key, cfg);
    ActionWindow out = index.window(nn.front().entry);
    if (nn.size() == 1) return out;
    for (auto& a : out.actions) std::fill(a.begin(), a.end(), 0.0);
    for (const auto& n : nn) {
        const ActionWindow w = index.window(n.entry);
        for (std::size_t s = 0; s < out.actions.size(); ++s)
            for (std::size_t c = 0; c < out.actions[s].size(); ++c) out.actions[s][c] += n.weight * w.actions[s][c];
    }
    return out;
}

ActionWindow query(const LatentIndex& index, std::span<const double> obs, std::span<const double> proprio,
                   const QueryConfig& cfg) {
    return query_key(index, index.embedder().embed(obs, proprio), cfg);
}

EpisodeResult rollout(const EnvConfig& env, std::uint64_t episode_seed, const LatentIndex& index,
                      const QueryConfig& cfg, std::size_t action_horizon, std::size_t max_steps) {
    if (action_horizon > index.horizon())
        throw ValidationError("action horizon T_a exceeds the indexed window horizon T_p");
    RetrievalPolicy policy(index, cfg);
    std::mt19937_64 rng(episode_seed);
    return rollout(env, episode_seed, policy, action_horizon, max_steps, rng);
}

}  // namespace classkit
