#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "classkit/pair_miner.hpp"
#include "classkit/toybench.hpp"
#include "classkit/trainer.hpp"
#include "test_util.hpp"

using namespace classkit;
using classkit::testing::make_demo;
using classkit::testing::random_matrix;
using classkit::testing::read_file;
using classkit::testing::scratch_dir;

namespace {

struct Mined {
    Dataset ds;
    std::vector<WindowIndex> handles;
    PairTable table;
    SoftWeights weights;
};

Mined toy(std::size_t demos, std::uint64_t seed = 5) {
    Mined m;
    m.ds = collect_demos(EnvConfig{}, demos, 0.005, seed);
    const auto windows = enumerate_windows(m.ds, 8, 1);
    for (const auto& w : windows) m.handles.push_back(w.index);
    MiningOptions o;
    o.k_quantile = 0.05;
    m.table = mine_pairs(windows, o);
    m.weights = build_soft_weights(m.table, fit_cdf(m.table));
    return m;
}

TrainConfig quick(std::size_t epochs) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 32;
    c.warmup_steps = 20;
    return c;
}

const EncoderSpec kSpec{12, {32}, 8, Activation::Tanh};

}  // namespace

TEST_CASE("config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = {};
    c.ema_power = 0.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = {};
    c.learning_rate = -1.0;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    CHECK(TrainConfig{}.hash() == TrainConfig{}.hash());
    TrainConfig d;
    d.tau = 0.07;
    CHECK(d.hash() != TrainConfig{}.hash());
    CHECK(parse_optimizer("sgd") == OptimizerKind::SGD);
    CHECK_THROWS_AS(parse_optimizer("adam"), ValidationError);
}

TEST_CASE("build_batch guarantees positives and is reproducible") {
    const auto m = toy(20);
    std::mt19937_64 r1(3), r2(3);
    const Batch a = build_batch(m.ds, m.handles, m.weights, 32, r1);
    const Batch b = build_batch(m.ds, m.handles, m.weights, 32, r2);
    CHECK(a.ordinals == b.ordinals);
    CHECK(a.obs == b.obs);
    CHECK(std::set<std::size_t>(a.ordinals.begin(), a.ordinals.end()).size() == 32);

    // Every window of this table has a positive, so at least B/2 rows are active.
    bool all_have = true;
    for (std::uint64_t i = 0; i < m.weights.window_count(); ++i) all_have &= !m.weights.positives(i).empty();
    std::size_t active = 0;
    for (std::size_t r = 0; r < 32; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 32; ++c) s += a.weights(r, c);
        if (s > 0.0) ++active;
        CHECK(a.weights(r, r) == 0.0);
    }
    if (all_have) CHECK(active >= 16);
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c)
            CHECK(a.weights(r, c) == m.weights.weight(a.ordinals[r], a.ordinals[c]) * (r != c));

    CHECK_THROWS_AS(build_batch(m.ds, m.handles, SoftWeights(3), 8, r1), ValidationError);
    CHECK_THROWS_AS(build_batch(m.ds, m.handles, m.weights, m.handles.size() + 1, r1), ValidationError);
}

TEST_CASE("LARS: zero gradient is a no-op; scalar layer reduces to scaled momentum SGD") {
    ParamVector p = init_encoder(EncoderSpec{1, {}, 1}, 2);
    p.values = {0.8, 0.0};  // weight, bias
    Vec v;
    const ParamVector before = p;
    OptimizerOptions opt;
    opt.weight_decay = 0.0;
    lars_step(p, Vec{0.0, 0.0}, v, opt);
    CHECK(p == before);

    const double g = 0.3;
    lars_step(p, Vec{g, 0.0}, v, opt);
    const double ratio = opt.trust_coeff * 0.8 / (g + opt.eps);
    CHECK(p.values[0] == doctest::Approx(0.8 - opt.lr * ratio * g).epsilon(1e-14));
    CHECK(v[0] == doctest::Approx(opt.lr * ratio * g).epsilon(1e-14));
    const double w1 = p.values[0];
    lars_step(p, Vec{g, 0.0}, v, opt);
    const double ratio2 = opt.trust_coeff * std::abs(w1) / (g + opt.eps);
    CHECK(p.values[0] == doctest::Approx(w1 - (opt.momentum * opt.lr * ratio * g + opt.lr * ratio2 * g)).epsilon(1e-14));

    Vec v2;
    ParamVector z = p;
    std::fill(z.values.begin(), z.values.end(), 0.0);
    lars_step(z, Vec{0.5, 0.5}, v2, opt);  // zero-norm layer uses ratio 1
    CHECK(z.values[0] == doctest::Approx(-opt.lr * 0.5));
    CHECK_THROWS_AS(lars_step(p, Vec{std::nan(""), 0.0}, v, opt), NumericError);
    CHECK_THROWS_AS(lars_step(p, Vec{1.0}, v, opt), ValidationError);
}

TEST_CASE("LARS step norm is bounded by lr * trust * ||w|| per layer") {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        ParamVector p = init_encoder(EncoderSpec{6, {10}, 4}, static_cast<std::uint64_t>(trial));
        const Matrix g = random_matrix(rng, 1, p.size());
        OptimizerOptions opt;
        opt.momentum = 0.0;
        const ParamVector before = p;
        Vec v;
        lars_step(p, g.data, v, opt);
        for (const auto& L : p.layers) {
            double step2 = 0.0, w2 = 0.0;
            for (std::size_t k = L.weight_offset; k < L.bias_offset + L.out; ++k) {
                step2 += std::pow(p.values[k] - before.values[k], 2);
                w2 += before.values[k] * before.values[k];
            }
            CHECK(std::sqrt(step2) <= opt.lr * opt.trust_coeff * std::sqrt(w2) * (1.0 + 1e-9));
        }
    }
}

TEST_CASE("EMA decay and update") {
    CHECK(std::abs(ema_decay(1, 0.75) - 0.4053964424986395) <= 1e-15);
    CHECK(ema_decay(1000000000, 0.75) == 0.9999);
    ParamVector p = init_encoder(EncoderSpec{2, {}, 2}, 1);
    ParamVector e = p;
    ema_update(e, p, 5, 0.75);
    CHECK(e == p);
    CHECK_THROWS_AS(ema_update(e, p, 0, 0.75), ValidationError);

    ParamVector far = p;
    for (auto& x : far.values) x += 1.0;
    ParamVector e2 = p;
    ema_update(e2, far, 1000000000, 0.75);
    for (std::size_t k = 0; k < p.size(); ++k) CHECK(std::abs(e2.values[k] - p.values[k]) <= 1e-4 + 1e-15);
}

TEST_CASE("schedule: linear warmup, continuous cosine decay") {
    const double lr = 0.4;
    CHECK(scheduled_lr(1, 1000, lr, 100) == doctest::Approx(0.004));
    CHECK(scheduled_lr(50, 1000, lr, 100) == doctest::Approx(0.2));
    CHECK(scheduled_lr(100, 1000, lr, 100) == doctest::Approx(lr));
    CHECK(std::abs(scheduled_lr(101, 1000, lr, 100) - lr) < 1e-5);
    CHECK(scheduled_lr(550, 1000, lr, 100) == doctest::Approx(0.2));
    CHECK(scheduled_lr(1000, 1000, lr, 100) == doctest::Approx(0.0));
    double prev = lr;
    for (std::size_t s = 101; s <= 1000; ++s) {
        const double cur = scheduled_lr(s, 1000, lr, 100);
        CHECK(cur <= prev + 1e-15);
        prev = cur;
    }
}

TEST_CASE("global norm clip") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        Matrix g = random_matrix(rng, 1, 30);
        const double before = norm2(g.data);
        const double reported = clip_global_norm(g.data, 0.5);
        CHECK(reported == before);
        CHECK(norm2(g.data) <= 0.5 + 1e-12);
    }
    Vec small{0.1, 0.1};
    clip_global_norm(small, 0.5);
    CHECK(small == Vec{0.1, 0.1});
}

TEST_CASE("train_class: zero epochs, determinism, loss decreases") {
    const auto m = toy(50);
    const auto init = train_class(m.ds, m.table, m.weights, kSpec, quick(0));
    CHECK(init.checkpoint.params == init_encoder(kSpec, derive_seed(0, 0)));
    CHECK(init.checkpoint.ema == init.checkpoint.params);
    CHECK(init.checkpoint.step == 0);

    // The quick table was mined over 8-step windows; training enumerates windows at stride 1 too.
    const auto a = train_class(m.ds, m.table, m.weights, kSpec, quick(6));
    const auto b = train_class(m.ds, m.table, m.weights, kSpec, quick(6));
    CHECK(serialize_checkpoint(a.checkpoint) == serialize_checkpoint(b.checkpoint));
    REQUIRE(a.loss_trace.size() >= 20);
    auto mean = [](auto first, auto last) {
        double s = 0.0;
        std::size_t n = 0;
        for (auto it = first; it != last; ++it)
            if (std::isfinite(*it)) s += *it, ++n;
        return s / static_cast<double>(n);
    };
    const auto& t = a.loss_trace;
    CHECK(mean(t.end() - 10, t.end()) < mean(t.begin(), t.begin() + 10));

    CHECK_THROWS_AS(train_class(m.ds, m.table, m.weights, EncoderSpec{5, {}, 4}, quick(1)), ValidationError);
    PairTable other = m.table;
    other.window_count += 1;
    CHECK_THROWS_AS(train_class(m.ds, other, m.weights, kSpec, quick(1)), ValidationError);
}

TEST_CASE("train_bc: zero epochs and convergence on a constant action") {
    Dataset ds;
    for (int k = 0; k < 12; ++k) {
        Demonstration d = make_demo("c" + std::to_string(k), 10, 3, 2, 2, 0.1 * k);
        for (auto& a : d.actions) a = {0.25, -0.5};
        ds.demos.push_back(d);
    }
    const EncoderSpec spec{3, {16}, 4, Activation::Tanh};
    TrainConfig c = quick(0);
    c.batch_size = 16;
    const auto zero = train_bc(ds, spec, {16}, 4, c);
    CHECK(zero.checkpoint.params == init_encoder(spec, derive_seed(0, 0)));
    REQUIRE(zero.checkpoint.head.has_value());
    CHECK(zero.checkpoint.head->horizon == 4);

    c.epochs = 150;
    c.optimizer = OptimizerKind::SGD;
    c.learning_rate = 0.05;
    c.augment = {0.0, 0.0};
    const auto r = train_bc(ds, spec, {16}, 4, c);
    CHECK(r.loss_trace.back() < 1e-3);
    const Vec pred = bc_predict(r.checkpoint, ds.demos[3].observations[2], ds.demos[3].proprio[2]);
    REQUIRE(pred.size() == 8);
    for (std::size_t k = 0; k < 8; ++k) CHECK(pred[k] == doctest::Approx(k % 2 == 0 ? 0.25 : -0.5).epsilon(0.05));

    const auto r2 = train_bc(ds, spec, {16}, 4, c);
    CHECK(serialize_checkpoint(r.checkpoint) == serialize_checkpoint(r2.checkpoint));
    CHECK_THROWS_AS(bc_predict(zero.checkpoint, Vec{1, 2, 3}, Vec{1}), ValidationError);
}

TEST_CASE("checkpoint round trip, truncation, hash warning") {
    const auto dir = scratch_dir("ckpt");
    const auto m = toy(10);
    TrainConfig c = quick(1);
    c.batch_size = 16;
    const auto ck = train_class(m.ds, m.table, m.weights, kSpec, c).checkpoint;
    save_checkpoint(ck, dir / "c.bin");
    const auto back = load_checkpoint(dir / "c.bin", c.hash());
    CHECK(back.checkpoint == ck);
    CHECK(back.warnings.empty());
    CHECK(ck.config_hash == c.hash());

    const auto warned = load_checkpoint(dir / "c.bin", c.hash() + 1);
    CHECK(warned.warnings.size() == 1);
    CHECK(warned.checkpoint == ck);

    const std::string bytes = read_file(dir / "c.bin");
    CHECK(bytes.substr(0, 8) == "CLSKCKPT");
    for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}}) {
        std::ofstream f(dir / "t.bin", std::ios::binary);
        f.write(bytes.data(), static_cast<std::streamsize>(cut));
        f.close();
        CHECK_THROWS_AS(load_checkpoint(dir / "t.bin"), CorruptFileError);
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "none.bin"), IoError);

    Checkpoint with_head = ck;
    with_head.head = HeadState{ck.params, ck.ema, ck.velocity, 4, 2};
    save_checkpoint(with_head, dir / "h.bin");
    CHECK(load_checkpoint(dir / "h.bin").checkpoint == with_head);
}
