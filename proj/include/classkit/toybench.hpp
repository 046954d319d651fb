#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "classkit/demo_store.hpp"

namespace classkit {

using Vec2 = std::array<double, 2>;

enum class Task { PointReach, DiscPush };
enum class Hetero { Fixed, RandRot, DynRot, RandAppearance };

std::string to_string(Task t);
std::string to_string(Hetero h);
Task parse_task(const std::string& s);
Hetero parse_hetero(const std::string& s);

// Unit-square workspace. Observations are scene features expressed in a camera frame
// rotated by theta about the workspace centre; actions always live in the world frame.
struct EnvConfig {
    Task task = Task::PointReach;
    Hetero hetero = Hetero::Fixed;
    double dyn_rot_rate = 0.5 * 3.14159265358979323846 / 180.0;  // rad/step
    std::size_t appearance_dim = 4;
    double success_radius = 0.05;
    std::size_t max_steps = 200;
    double action_clip = 0.05;
    double agent_radius = 0.03;  // disc_push contact geometry
    double block_radius = 0.05;

    void validate() const;
    std::size_t obs_dim() const;
    std::size_t proprio_dim() const { return 2; }
    std::size_t action_dim() const { return 2; }
};

struct EnvState {
    Vec2 agent{};
    Vec2 goal{};
    Vec2 block{};
    double theta = 0.0;
    double theta_rate = 0.0;  // signed per-step rotation (dyn_rot only)
    Vec appearance;
    std::size_t step = 0;
    bool done = false;
    bool success = false;

    bool operator==(const EnvState&) const = default;
};

struct Observation {
    Vec obs;
    Vec proprio;
};

struct StepResult {
    Observation observation;
    bool done = false;
    bool success = false;
};

// Fixed world landmark (robot base analog) included in every observation.
inline constexpr Vec2 kLandmark{0.5, 0.0};

class Env {
public:
    explicit Env(EnvConfig cfg);

    Observation reset(std::uint64_t seed);
    StepResult step(std::span<const double> action);
    Observation observe() const;

    const EnvState& state() const { return state_; }
    void set_state(EnvState s) { state_ = std::move(s); }
    const EnvConfig& config() const { return cfg_; }
    bool task_solved() const;

private:
    EnvConfig cfg_;
    EnvState state_;
};

Vec2 rotate(Vec2 v, double theta);

// Anything that maps the current step to a chunk of world-frame actions.
class Policy {
public:
    virtual ~Policy() = default;
    virtual std::vector<Vec> plan(const Observation& ob, const EnvState& state, std::mt19937_64& rng) = 0;
};

// Scripted expert: proportional reach, or circle-behind-then-push for disc_push.
Vec scripted_expert(const EnvConfig& cfg, const EnvState& state, double noise_std, std::mt19937_64& rng);

class ExpertPolicy : public Policy {
public:
    ExpertPolicy(EnvConfig cfg, double noise_std) : cfg_(std::move(cfg)), noise_(noise_std) {}
    std::vector<Vec> plan(const Observation&, const EnvState& state, std::mt19937_64& rng) override {
        return {scripted_expert(cfg_, state, noise_, rng)};
    }

private:
    EnvConfig cfg_;
    double noise_;
};

// Uniform actions in the clip box.
class RandomPolicy : public Policy {
public:
    explicit RandomPolicy(double clip) : clip_(clip) {}
    std::vector<Vec> plan(const Observation&, const EnvState&, std::mt19937_64& rng) override;

private:
    double clip_;
};

struct TrajectoryStep {
    EnvState state;  // before the action
    Vec action;
};

struct EpisodeResult {
    bool success = false;
    std::size_t steps = 0;
    std::size_t queries = 0;
    EnvState initial;
    std::vector<TrajectoryStep> trajectory;
};

// Observe, plan, execute up to action_horizon actions of the chunk, repeat until the
// episode ends or max_steps actions have been taken.
EpisodeResult rollout(const EnvConfig& cfg, std::uint64_t episode_seed, Policy& policy, std::size_t action_horizon,
                      std::size_t max_steps, std::mt19937_64& policy_rng, bool record = true);

// n successful expert episodes; failed attempts are resampled.
Dataset collect_demos(const EnvConfig& cfg, std::size_t n, double noise_std, std::uint64_t seed);

using PolicyFactory = std::function<std::unique_ptr<Policy>(std::uint64_t seed)>;

struct SeedOutcome {
    std::uint64_t seed = 0;
    double success_rate = 0.0;
    std::size_t successes = 0;
    std::size_t episodes = 0;
    std::vector<EnvState> initial_states;
};

struct EvalReport {
    std::vector<SeedOutcome> per_seed;
    double mean_success = 0.0;
    double wilson_low = 0.0;
    double wilson_high = 0.0;
    double wall_seconds = 0.0;
};

// Episode e of seed s always starts from the same scene regardless of the policy.
std::uint64_t episode_seed(std::uint64_t seed, std::size_t episode);

EvalReport evaluate(const PolicyFactory& make_policy, const EnvConfig& cfg, std::size_t episodes,
                    const std::vector<std::uint64_t>& seeds, std::size_t action_horizon, std::size_t threads = 1);

// Wilson score interval for k successes out of n at z = 1.96.
std::pair<double, double> wilson_interval(std::size_t k, std::size_t n, double z = 1.959963984540054);

}  // namespace classkit
