#include "classkit/toybench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "classkit/parallel.hpp"

namespace classkit {

std::string to_string(Task t) { return t == Task::PointReach ? "point_reach" : "disc_push"; }

std::string to_string(Hetero h) {
    switch (h) {
        case Hetero::Fixed: return "fixed";
        case Hetero::RandRot: return "rand_rot";
        case Hetero::DynRot: return "dyn_rot";
        case Hetero::RandAppearance: return "rand_appearance";
    }
    return "fixed";
}

Task parse_task(const std::string& s) {
    if (s == "point_reach") return Task::PointReach;
    if (s == "disc_push") return Task::DiscPush;
    throw ValidationError("unknown task '" + s + "' (expected point_reach|disc_push)");
}

Hetero parse_hetero(const std::string& s) {
    if (s == "fixed") return Hetero::Fixed;
    if (s == "rand_rot") return Hetero::RandRot;
    if (s == "dyn_rot") return Hetero::DynRot;
    if (s == "rand_appearance") return Hetero::RandAppearance;
    throw ValidationError("unknown heterogeneity mode '" + s + "' (expected fixed|rand_rot|dyn_rot|rand_appearance)");
}

void EnvConfig::validate() const {
    if (!(dyn_rot_rate > 0.0)) throw ValidationError("dyn_rot_rate must be > 0");
    if (!(success_radius > 0.0)) throw ValidationError("success_radius must be > 0");
    if (!(action_clip > 0.0)) throw ValidationError("action_clip must be > 0");
    if (max_steps == 0) throw ValidationError("max_steps must be > 0");
    if (!(agent_radius > 0.0 && block_radius > 0.0)) throw ValidationError("disc radii must be > 0");
}

std::size_t EnvConfig::obs_dim() const { return (task == Task::PointReach ? 8 : 12) + appearance_dim; }

Vec2 rotate(Vec2 v, double theta) {
    const double c = std::cos(theta), s = std::sin(theta);
    return {c * v[0] - s * v[1], s * v[0] + c * v[1]};
}

namespace {

constexpr Vec2 kCentre{0.5, 0.5};
constexpr double kTwoPi = 2.0 * std::numbers::pi;

Vec2 sub(Vec2 a, Vec2 b) { return {a[0] - b[0], a[1] - b[1]}; }
Vec2 add(Vec2 a, Vec2 b) { return {a[0] + b[0], a[1] + b[1]}; }
Vec2 scale(Vec2 a, double s) { return {a[0] * s, a[1] * s}; }
double len(Vec2 a) { return std::hypot(a[0], a[1]); }

Vec2 clip_norm(Vec2 a, double max_len) {
    const double n = len(a);
    return n > max_len ? scale(a, max_len / n) : a;
}

Vec2 clamp_box(Vec2 p, double lo, double hi) { return {std::clamp(p[0], lo, hi), std::clamp(p[1], lo, hi)}; }

double wrap_angle(double a) {
    a = std::fmod(a, kTwoPi);
    return a < 0.0 ? a + kTwoPi : a;
}

}  // namespace

Env::Env(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

Observation Env::reset(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> angle(0.0, kTwoPi);
    state_ = EnvState{};
    if (cfg_.task == Task::PointReach) {
        state_.agent = {unit(rng), unit(rng)};
        state_.goal = {unit(rng), unit(rng)};
    } else {
        // Block and goal keep clear of the walls so the push-from-behind pose is reachable.
        std::uniform_real_distribution<double> inner(0.2, 0.8);
        state_.block = {inner(rng), inner(rng)};
        state_.goal = {inner(rng), inner(rng)};
        const double clearance = cfg_.agent_radius + cfg_.block_radius + 0.02;
        do {
            state_.agent = {0.05 + 0.9 * unit(rng), 0.05 + 0.9 * unit(rng)};
        } while (len(sub(state_.agent, state_.block)) < clearance);
    }
    if (cfg_.hetero != Hetero::Fixed && cfg_.hetero != Hetero::RandAppearance) state_.theta = angle(rng);
    if (cfg_.hetero == Hetero::DynRot) state_.theta_rate = (unit(rng) < 0.5 ? 1.0 : -1.0) * cfg_.dyn_rot_rate;
    state_.appearance.assign(cfg_.appearance_dim, 0.0);
    if (cfg_.hetero == Hetero::RandAppearance) {
        std::uniform_real_distribution<double> colour(-0.5, 0.5);
        for (double& a : state_.appearance) a = colour(rng);
    }
    return observe();
}

Observation Env::observe() const {
    const double th = state_.theta;
    std::vector<Vec2> groups{sub(state_.agent, kCentre), sub(state_.goal, kCentre), sub(state_.goal, state_.agent),
                             sub(kLandmark, kCentre)};
    if (cfg_.task == Task::DiscPush) {
        groups.push_back(sub(state_.block, kCentre));
        groups.push_back(sub(state_.goal, state_.block));
    }
    Observation ob;
    ob.obs.reserve(cfg_.obs_dim());
    for (const auto& g : groups) {
        const Vec2 r = rotate(g, th);
        ob.obs.push_back(r[0]);
        ob.obs.push_back(r[1]);
    }
    ob.obs.insert(ob.obs.end(), state_.appearance.begin(), state_.appearance.end());
    const Vec2 p = sub(state_.agent, kCentre);
    ob.proprio = {p[0], p[1]};
    return ob;
}

bool Env::task_solved() const {
    const Vec2 obj = cfg_.task == Task::PointReach ? state_.agent : state_.block;
    return len(sub(obj, state_.goal)) <= cfg_.success_radius;
}

StepResult Env::step(std::span<const double> action) {
    if (state_.done) throw ValidationError("step called on a finished episode");
    if (action.size() != 2) throw ValidationError("actions are 2-vectors");
    const Vec2 a = clip_norm({action[0], action[1]}, cfg_.action_clip);
    state_.agent = clamp_box(add(state_.agent, a), 0.0, 1.0);
    if (cfg_.task == Task::DiscPush) {
        const double contact = cfg_.agent_radius + cfg_.block_radius;
        const Vec2 rel = sub(state_.block, state_.agent);
        const double d = len(rel);
        if (d < contact) {
            const Vec2 normal = d > 1e-12 ? scale(rel, 1.0 / d) : Vec2{1.0, 0.0};
            state_.block = clamp_box(add(state_.agent, scale(normal, contact)), cfg_.block_radius, 1.0 - cfg_.block_radius);
        }
    }
    state_.theta = wrap_angle(state_.theta + state_.theta_rate);
    ++state_.step;
    state_.success = task_solved();
    state_.done = state_.success || state_.step >= cfg_.max_steps;
    return {observe(), state_.done, state_.success};
}

namespace {

Vec2 reach_action(Vec2 from, Vec2 to, double clip) { return clip_norm(sub(to, from), clip); }

Vec2 push_expert(const EnvConfig& cfg, const EnvState& s) {
    const double contact = cfg.agent_radius + cfg.block_radius;
    const double orbit = contact + 0.03;
    const Vec2 to_goal = sub(s.goal, s.block);
    const double gd = len(to_goal);
    if (gd < 1e-9) return {0.0, 0.0};
    const Vec2 dir = scale(to_goal, 1.0 / gd);
    const Vec2 rel = sub(s.agent, s.block);
    const double r = len(rel);

    const double want = std::atan2(-dir[1], -dir[0]);
    const double have = std::atan2(rel[1], rel[0]);
    double err = want - have;
    err = std::remainder(err, kTwoPi);

    if (std::abs(err) < 0.15 && r < orbit + 0.02) {
        // Aligned behind the block: push through along the block->goal line.
        const double depth = std::min(0.04, gd);
        const Vec2 target = sub(s.block, scale(dir, contact - depth));
        return reach_action(s.agent, target, cfg.action_clip);
    }
    if (r < orbit - 0.005) {
        // Too close to circle safely; back off radially first.
        const Vec2 out = r > 1e-9 ? scale(rel, 1.0 / r) : Vec2{-dir[0], -dir[1]};
        return reach_action(s.agent, add(s.block, scale(out, orbit)), cfg.action_clip);
    }
    if (std::abs(err) < 0.15) return reach_action(s.agent, add(s.block, scale(dir, -orbit)), cfg.action_clip);
    if (r > orbit + 0.06) {
        // Far away: head for the closest orbit point on the way round.
        const double step = std::clamp(err, -0.5, 0.5);
        const double a = have + step;
        return reach_action(s.agent, add(s.block, {orbit * std::cos(a), orbit * std::sin(a)}), cfg.action_clip);
    }
    const double step = std::clamp(err, -0.45, 0.45);
    const double a = have + step;
    return reach_action(s.agent, add(s.block, {orbit * std::cos(a), orbit * std::sin(a)}), cfg.action_clip);
}

}  // namespace

Vec scripted_expert(const EnvConfig& cfg, const EnvState& state, double noise_std, std::mt19937_64& rng) {
    Vec2 a = cfg.task == Task::PointReach ? reach_action(state.agent, state.goal, cfg.action_clip)
                                          : push_expert(cfg, state);
    if (noise_std > 0.0) {
        std::normal_distribution<double> n(0.0, noise_std);
        a[0] += n(rng);
        a[1] += n(rng);
    }
    return {a[0], a[1]};
}

std::vector<Vec> RandomPolicy::plan(const Observation&, const EnvState&, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-clip_, clip_);
    return {{u(rng), u(rng)}};
}

EpisodeResult rollout(const EnvConfig& cfg, std::uint64_t episode_seed, Policy& policy, std::size_t action_horizon,
                      std::size_t max_steps, std::mt19937_64& policy_rng, bool record) {
    if (action_horizon == 0) throw ValidationError("action horizon must be >= 1");
    Env env(cfg);
    Observation ob = env.reset(episode_seed);
    EpisodeResult res;
    res.initial = env.state();
    while (res.steps < max_steps && !env.state().done) {
        const std::vector<Vec> chunk = policy.plan(ob, env.state(), policy_rng);
        ++res.queries;
        if (chunk.empty()) throw Error("policy returned an empty action chunk");
        const std::size_t n = std::min(action_horizon, chunk.size());
        for (std::size_t k = 0; k < n && res.steps < max_steps && !env.state().done; ++k) {
            if (record) res.trajectory.push_back({env.state(), chunk[k]});
            const StepResult sr = env.step(chunk[k]);
            ob = sr.observation;
            ++res.steps;
        }
    }
    res.success = env.state().success;
    return res;
}

Dataset collect_demos(const EnvConfig& cfg, std::size_t n, double noise_std, std::uint64_t seed) {
    if (n == 0) throw ValidationError("collect_demos needs n >= 1");
    Dataset ds;
    std::size_t attempts = 0, failures = 0;
    ExpertPolicy expert(cfg, noise_std);
    while (ds.size() < n) {
        const std::uint64_t ep_seed = derive_seed(seed, attempts, 0xD3);
        std::mt19937_64 rng(derive_seed(seed, attempts, 0xE4));
        ++attempts;
        Env env(cfg);
        Observation ob = env.reset(ep_seed);
        Demonstration d;
        std::ostringstream thetas;
        thetas.precision(17);
        while (!env.state().done) {
            const Vec a = scripted_expert(cfg, env.state(), noise_std, rng);
            d.observations.push_back(ob.obs);
            d.proprio.push_back(ob.proprio);
            d.actions.push_back(a);
            if (d.actions.size() > 1) thetas << ' ';
            thetas << env.state().theta;
            ob = env.step(a).observation;
        }
        if (!env.state().success) {
            ++failures;
            if (attempts >= 10 && 2 * failures > attempts)
                throw Error("expert failure rate above 50% (" + std::to_string(failures) + "/" +
                            std::to_string(attempts) + "); environment misconfigured");
            continue;
        }
        char id[32];
        std::snprintf(id, sizeof id, "demo_%05zu", ds.size());
        d.id = id;
        d.meta["task"] = to_string(cfg.task);
        d.meta["hetero"] = to_string(cfg.hetero);
        d.meta["episode_seed"] = std::to_string(ep_seed);
        d.meta["success"] = "true";
        d.meta["theta"] = thetas.str();
        std::ostringstream app;
        app.precision(17);
        for (std::size_t k = 0; k < env.state().appearance.size(); ++k)
            app << (k ? " " : "") << env.state().appearance[k];
        d.meta["appearance"] = app.str();
        ds.demos.push_back(std::move(d));
    }
    return ds;
}

std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode) { return derive_seed(seed, episode, 0xE7A1); }

std::pair<double, double> wilson_interval(std::size_t k, std::size_t n, double z) {
    if (n == 0) return {0.0, 1.0};
    const double nn = static_cast<double>(n);
    const double p = static_cast<double>(k) / nn;
    const double z2 = z * z;
    const double centre = (p + z2 / (2 * nn)) / (1 + z2 / nn);
    const double half = z * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn)) / (1 + z2 / nn);
    return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

EvalReport evaluate(const PolicyFactory& make_policy, const EnvConfig& cfg, std::size_t episodes,
                    const std::vector<std::uint64_t>& seeds, std::size_t action_horizon, std::size_t threads) {
    const auto t0 = std::chrono::steady_clock::now();
    EvalReport rep;
    rep.per_seed.resize(seeds.size());
    std::size_t total_succ = 0, total = 0;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
        const std::uint64_t seed = seeds[si];
        auto& out = rep.per_seed[si];
        out.seed = seed;
        out.episodes = episodes;
        out.initial_states.resize(episodes);
        std::vector<char> ok(episodes, 0);
        // One policy instance per worker; policies may hold scratch state.
        const std::size_t workers = std::max<std::size_t>(1, std::min(threads, episodes));
        std::vector<std::unique_ptr<Policy>> policies(workers);
        for (auto& p : policies) p = make_policy(seed);
        parallel_for(workers, workers, [&](std::size_t w) {
            for (std::size_t e = w; e < episodes; e += workers) {
                std::mt19937_64 prng(derive_seed(seed, e, 0x9011));
                const EpisodeResult r =
                    rollout(cfg, episode_seed(seed, e), *policies[w], action_horizon, cfg.max_steps, prng, false);
                ok[e] = r.success;
                out.initial_states[e] = r.initial;
            }
        });
        out.successes = static_cast<std::size_t>(std::count(ok.begin(), ok.end(), 1));
        out.success_rate = episodes ? static_cast<double>(out.successes) / static_cast<double>(episodes) : 0.0;
        total_succ += out.successes;
        total += episodes;
    }
    double sum = 0.0;
    for (const auto& s : rep.per_seed) sum += s.success_rate;
    rep.mean_success = seeds.empty() ? 0.0 : sum / static_cast<double>(seeds.size());
    std::tie(rep.wilson_low, rep.wilson_high) = wilson_interval(total_succ, total);
    rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

}  // namespace classkit
