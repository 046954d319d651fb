#include <doctest.h>

#include <fstream>
#include <set>

#include "classkit/config.hpp"
#include "classkit/evalreport.hpp"
#include "test_util.hpp"

using namespace classkit;
using classkit::testing::read_file;
using classkit::testing::scratch_dir;

namespace {

PipelineConfig tiny() {
    PipelineConfig c;
    c.demos = 30;
    c.train.epochs = 2;
    c.train.batch_size = 32;
    c.train.warmup_steps = 5;
    c.hidden_dims = {16};
    c.latent_dim = 8;
    c.bc_head_dims = {16};
    c.episodes = 8;
    c.eval_seeds = {0, 1};
    return c;
}

EnvConfig mode(Hetero h) {
    EnvConfig e;
    e.hetero = h;
    return e;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("raw kNN: deterministic, solves the aligned task, degrades under rotation") {
    PipelineConfig cfg;
    cfg.episodes = 50;
    cfg.eval_seeds = {0};
    auto run = [&](Hetero h) {
        const PreparedData d = prepare_data(cfg, mode(h), false);
        return run_method(cfg, d, Method::RawKnn);
    };
    const auto fixed = run(Hetero::Fixed);
    const auto again = run(Hetero::Fixed);
    CHECK(fixed.per_seed == again.per_seed);
    CHECK(fixed.mean >= 0.85);
    const auto rot = run(Hetero::RandRot);
    CHECK(rot.mean <= fixed.mean - 0.25);
}

TEST_CASE("compare: one row per method and config, paired scenes, summary invariants") {
    const PipelineConfig cfg = tiny();
    const auto single = compare(cfg, {Method::RawKnn}, {mode(Hetero::Fixed)});
    CHECK(single.rows.size() == 1);
    CHECK(single.config_hash == config_hash(cfg));

    const auto rep = compare(cfg, {Method::ClassRetrieval, Method::RawKnn, Method::BcMlp, Method::HardRetrieval},
                             {mode(Hetero::Fixed), mode(Hetero::RandRot)});
    REQUIRE(rep.rows.size() == 8);
    for (Hetero h : {Hetero::Fixed, Hetero::RandRot}) {
        const auto& ref = rep.row(Method::RawKnn, h);
        for (Method m : {Method::ClassRetrieval, Method::BcMlp, Method::HardRetrieval}) {
            const auto& row = rep.row(m, h);
            REQUIRE(row.per_seed.size() == 2);
            for (std::size_t s = 0; s < 2; ++s) CHECK(row.per_seed[s].scene_hash == ref.per_seed[s].scene_hash);
        }
    }
    CHECK(rep.row(Method::RawKnn, Hetero::Fixed).per_seed[0].scene_hash !=
          rep.row(Method::RawKnn, Hetero::RandRot).per_seed[0].scene_hash);
    for (const auto& row : rep.rows) {
        double sum = 0.0;
        for (const auto& s : row.per_seed) {
            CHECK(s.success_rate >= 0.0);
            CHECK(s.success_rate <= 1.0);
            CHECK(s.success_rate == static_cast<double>(s.successes) / static_cast<double>(s.episodes));
            sum += s.success_rate;
        }
        CHECK(row.mean == sum / static_cast<double>(row.per_seed.size()));
        CHECK(row.wilson_low <= row.mean);
        CHECK(row.wilson_high >= row.mean);
        CHECK(row.timings.collect >= 0.0);
        CHECK(row.timings.mining >= 0.0);
        CHECK(row.timings.training >= 0.0);
        CHECK(row.timings.inference > 0.0);
    }
    CHECK(rep.row(Method::RawKnn, Hetero::Fixed).timings.training == 0.0);
    CHECK(rep.row(Method::ClassRetrieval, Hetero::Fixed).timings.training > 0.0);
    CHECK_THROWS_AS(rep.row(Method::BcMlp, Hetero::DynRot), ValidationError);
    CHECK_THROWS_AS(compare(cfg, {}, {mode(Hetero::Fixed)}), ValidationError);
}

TEST_CASE("eval_every reports the best periodic evaluation") {
    PipelineConfig cfg = tiny();
    cfg.train.epochs = 4;
    cfg.eval_every = 2;
    const PreparedData d = prepare_data(cfg, mode(Hetero::Fixed));
    for (Method m : {Method::ClassRetrieval, Method::BcMlp}) {
        const auto row = run_method(cfg, d, m);
        for (const auto& s : row.per_seed) {
            REQUIRE(s.best_epoch.has_value());
            CHECK((*s.best_epoch == 2 || *s.best_epoch == 4));
            CHECK(s.success_rate >= s.final_success_rate);
        }
    }
    cfg.eval_every = 0;
    const auto plain = run_method(cfg, d, Method::ClassRetrieval);
    CHECK(!plain.per_seed[0].best_epoch.has_value());
}

TEST_CASE("report files: reload gives identical values; CSV mirrors JSONL") {
    const PipelineConfig cfg = tiny();
    auto rep = compare(cfg, {Method::RawKnn, Method::BcMlp}, {mode(Hetero::Fixed), mode(Hetero::DynRot)});
    const auto dir = scratch_dir("evalreport");
    write_report_jsonl(rep, dir / "r.jsonl");
    write_report_csv(rep, dir / "r.csv");
    write_timings_jsonl(rep, dir / "t.jsonl");
    const auto back = load_report_jsonl(dir / "r.jsonl");
    for (auto& row : rep.rows) row.timings = {};
    CHECK(back == rep);

    const std::string jsonl = read_file(dir / "r.jsonl");
    CHECK(count_lines(jsonl) == 8);
    CHECK(jsonl.find("\"success_rate\"") != std::string::npos);
    CHECK(jsonl.find("t_inference") == std::string::npos);
    CHECK(count_lines(read_file(dir / "r.csv")) == 9);
    CHECK(count_lines(read_file(dir / "t.jsonl")) == 4);

    std::ofstream(dir / "bad.jsonl") << "{\"method\": 3}\n";
    CHECK_THROWS_AS(load_report_jsonl(dir / "bad.jsonl"), CorruptFileError);
    CHECK_THROWS_AS(load_report_jsonl(dir / "absent.jsonl"), IoError);
}

TEST_CASE("controllers reject unusable checkpoints") {
    const auto p = init_encoder(EncoderSpec{12, {4}, 3}, 1);
    CHECK_THROWS_AS(bc_controller(Checkpoint{p, p, {}, 0, 0, {}}), ValidationError);
}
