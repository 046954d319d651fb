#include <doctest.h>

#include <cmath>
#include <numbers>
#include <set>

#include "classkit/toybench.hpp"
#include "test_util.hpp"

using namespace classkit;

namespace {

EnvConfig with(Task t, Hetero h) {
    EnvConfig c;
    c.task = t;
    c.hetero = h;
    return c;
}

double pair_norm(const Vec& v, std::size_t g) { return std::hypot(v[2 * g], v[2 * g + 1]); }

struct Logged {
    std::vector<Vec> actions, obs;
};

Logged expert_log(const EnvConfig& cfg, std::uint64_t seed, double noise) {
    Env env(cfg);
    Observation ob = env.reset(seed);
    std::mt19937_64 rng(99);
    Logged l;
    while (!env.state().done) {
        const Vec a = scripted_expert(cfg, env.state(), noise, rng);
        l.actions.push_back(a);
        l.obs.push_back(ob.obs);
        ob = env.step(a).observation;
    }
    return l;
}

}  // namespace

TEST_CASE("reset: fixed mode is unrotated, seeds reproduce, rotation keeps group norms") {
    for (Task t : {Task::PointReach, Task::DiscPush}) {
        Env fixed(with(t, Hetero::Fixed));
        const Observation a = fixed.reset(7);
        const EnvState s = fixed.state();
        CHECK(s.theta == 0.0);
        CHECK(a.obs[0] == s.agent[0] - 0.5);
        CHECK(a.obs[1] == s.agent[1] - 0.5);
        CHECK(a.obs[4] == s.goal[0] - s.agent[0]);
        CHECK(a.obs.size() == fixed.config().obs_dim());
        CHECK(a.proprio == Vec{s.agent[0] - 0.5, s.agent[1] - 0.5});
        CHECK(fixed.reset(7).obs == a.obs);
        CHECK(fixed.state() == s);

        Env rot(with(t, Hetero::RandRot));
        const Observation b = rot.reset(7);
        CHECK(rot.state().agent == s.agent);
        CHECK(rot.state().theta != 0.0);
        const std::size_t groups = t == Task::PointReach ? 4 : 6;
        for (std::size_t g = 0; g < groups; ++g) CHECK(pair_norm(b.obs, g) == doctest::Approx(pair_norm(a.obs, g)).epsilon(1e-14));
        CHECK(b.proprio == a.proprio);
    }
}

TEST_CASE("appearance and dynamic rotation modes") {
    Env app(with(Task::PointReach, Hetero::RandAppearance));
    const auto ob = app.reset(3);
    CHECK(app.state().theta == 0.0);
    CHECK(app.state().appearance.size() == 4);
    CHECK(std::any_of(ob.obs.end() - 4, ob.obs.end(), [](double x) { return x != 0.0; }));
    Env fixed(with(Task::PointReach, Hetero::Fixed));
    const auto fo = fixed.reset(3);
    CHECK(std::all_of(fo.obs.end() - 4, fo.obs.end(), [](double x) { return x == 0.0; }));

    EnvConfig dc = with(Task::PointReach, Hetero::DynRot);
    Env dyn(dc);
    dyn.reset(5);
    const double th0 = dyn.state().theta;
    dyn.step(Vec{0.0, 0.0});
    double diff = std::remainder(dyn.state().theta - th0, 2 * std::numbers::pi);
    CHECK(std::abs(std::abs(diff) - dc.dyn_rot_rate) < 1e-12);
    CHECK(dyn.state().theta >= 0.0);
    CHECK(dyn.state().theta < 2 * std::numbers::pi);
}

TEST_CASE("step: success at goal, clipping, done guard") {
    Env env(EnvConfig{});
    env.reset(1);
    EnvState s = env.state();
    s.agent = {0.3, 0.3};
    s.goal = {0.3, 0.3};
    env.set_state(s);
    const auto r = env.step(Vec{0.0, 0.0});
    CHECK(r.success);
    CHECK(r.done);
    CHECK_THROWS_AS(env.step(Vec{0.0, 0.0}), ValidationError);

    env.reset(1);
    s = env.state();
    s.agent = {0.5, 0.5};
    s.goal = {0.0, 1.0};
    env.set_state(s);
    env.step(Vec{3.0, 4.0});
    CHECK(std::hypot(env.state().agent[0] - 0.5, env.state().agent[1] - 0.5) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK_THROWS_AS(env.step(Vec{0.0}), ValidationError);
}

TEST_CASE("disc contact pushes the block along the contact normal") {
    EnvConfig cfg = with(Task::DiscPush, Hetero::Fixed);
    Env env(cfg);
    env.reset(2);
    EnvState s = env.state();
    s.agent = {0.3, 0.5};
    s.block = {0.39, 0.5};
    s.goal = {0.9, 0.9};
    env.set_state(s);
    env.step(Vec{0.03, 0.0});
    CHECK(env.state().block[0] == doctest::Approx(0.33 + cfg.agent_radius + cfg.block_radius));
    CHECK(env.state().block[1] == doctest::Approx(0.5));
}

TEST_CASE("actions are world-frame: rotation changes observations, never actions") {
    for (Task t : {Task::PointReach, Task::DiscPush}) {
        const Logged a = expert_log(with(t, Hetero::Fixed), 21, 0.005);
        const Logged b = expert_log(with(t, Hetero::RandRot), 21, 0.005);
        CHECK(a.actions == b.actions);
        CHECK(a.obs != b.obs);
    }
}

TEST_CASE("expert: clipped heading at the goal when far, near-zero when there") {
    EnvConfig cfg;
    EnvState s;
    s.agent = {0.1, 0.1};
    s.goal = {0.9, 0.7};
    std::mt19937_64 rng(1);
    const Vec a = scripted_expert(cfg, s, 0.0, rng);
    CHECK(std::hypot(a[0], a[1]) == doctest::Approx(cfg.action_clip));
    CHECK(a[1] / a[0] == doctest::Approx(0.6 / 0.8));
    s.goal = s.agent;
    const Vec z = scripted_expert(cfg, s, 0.0, rng);
    CHECK(std::hypot(z[0], z[1]) < 1e-12);
}

TEST_CASE("experts solve both tasks; a random controller rarely pushes the disc home") {
    for (Task t : {Task::PointReach, Task::DiscPush}) {
        const EnvConfig cfg = with(t, Hetero::Fixed);
        const auto rep = evaluate([&](std::uint64_t) { return std::make_unique<ExpertPolicy>(cfg, 0.01); }, cfg, 100, {0, 1},
                                  1);
        CHECK(rep.mean_success >= 0.99);
    }
    const EnvConfig push = with(Task::DiscPush, Hetero::Fixed);
    const auto rnd = evaluate([&](std::uint64_t) { return std::make_unique<RandomPolicy>(push.action_clip); }, push, 200, {0},
                              1);
    CHECK(rnd.mean_success <= 0.05);
}

TEST_CASE("evaluate is reproducible and pairs initial scenes across policies") {
    const EnvConfig cfg;
    auto expert = [&](std::uint64_t) { return std::make_unique<ExpertPolicy>(cfg, 0.01); };
    auto random = [&](std::uint64_t) { return std::make_unique<RandomPolicy>(cfg.action_clip); };
    const auto a = evaluate(random, cfg, 20, {3, 4}, 1);
    const auto b = evaluate(random, cfg, 20, {3, 4}, 1, 3);
    REQUIRE(a.per_seed.size() == 2);
    for (std::size_t s = 0; s < 2; ++s) {
        CHECK(a.per_seed[s].successes == b.per_seed[s].successes);
        CHECK(a.per_seed[s].initial_states == b.per_seed[s].initial_states);
    }
    const auto c = evaluate(expert, cfg, 20, {3, 4}, 1);
    CHECK(c.per_seed[0].initial_states == a.per_seed[0].initial_states);
    CHECK(a.mean_success == doctest::Approx((a.per_seed[0].success_rate + a.per_seed[1].success_rate) / 2));
}

TEST_CASE("collect_demos") {
    const Dataset a = collect_demos(EnvConfig{}, 40, 0.005, 9);
    const Dataset b = collect_demos(EnvConfig{}, 40, 0.005, 9);
    CHECK(a.size() == 40);
    CHECK(dump_dataset(a) == dump_dataset(b));
    for (const auto& d : a.demos) CHECK(d.meta.at("success") == "true");
    CHECK(a.demos[0].id == "demo_00000");

    const Dataset r = collect_demos(with(Task::PointReach, Hetero::RandRot), 20, 0.005, 9);
    std::set<std::string> first_theta;
    for (const auto& d : r.demos) first_theta.insert(d.meta.at("theta").substr(0, d.meta.at("theta").find(' ')));
    CHECK(first_theta.size() > 1);
    CHECK_THROWS_AS(collect_demos(EnvConfig{}, 0, 0.0, 1), ValidationError);

    // A hopeless configuration trips the failure-rate guard.
    EnvConfig hard;
    hard.max_steps = 1;
    CHECK_THROWS_AS(collect_demos(hard, 5, 0.0, 1), Error);
}

TEST_CASE("wilson interval") {
    const auto [lo, hi] = wilson_interval(45, 50);
    CHECK(lo == doctest::Approx(0.7864).epsilon(1e-3));
    CHECK(hi == doctest::Approx(0.9565).epsilon(1e-3));
    const auto [l0, h0] = wilson_interval(0, 10);
    CHECK(l0 == 0.0);
    CHECK(h0 > 0.0);
}

TEST_CASE("parsers") {
    CHECK(parse_task("disc_push") == Task::DiscPush);
    CHECK(parse_hetero("dyn_rot") == Hetero::DynRot);
    CHECK_THROWS_AS(parse_task("stack"), ValidationError);
    CHECK_THROWS_AS(parse_hetero("blur"), ValidationError);
    EnvConfig bad;
    bad.success_radius = 0.0;
    CHECK_THROWS_AS(Env{bad}, ValidationError);
}
