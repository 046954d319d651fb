#include "classkit/evalreport.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <memory>
#include <tuple>

#include <json.hpp>

#include "classkit/config.hpp"

namespace classkit {

using nlohmann::json;

namespace {

double since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

PolicyFactory share_index(std::shared_ptr<const LatentIndex> index, const QueryConfig& cfg) {
    return [index, cfg](std::uint64_t) { return std::make_unique<OwningRetrievalPolicy>(index, cfg); };
}

}  // namespace

PolicyFactory raw_knn_controller(const Dataset& dataset, const QueryConfig& cfg, std::size_t horizon) {
    return share_index(std::make_shared<const LatentIndex>(build_raw_index(dataset, horizon)), cfg);
}

PolicyFactory class_controller(const Dataset& dataset, const Checkpoint& ckpt, const QueryConfig& cfg, std::size_t horizon) {
    return share_index(std::make_shared<const LatentIndex>(build_index(dataset, ckpt, horizon)), cfg);
}

PolicyFactory bc_controller(const Checkpoint& ckpt) {
    if (!ckpt.head) throw ValidationError("checkpoint has no BC head");
    auto shared = std::make_shared<const Checkpoint>(ckpt);
    return [shared](std::uint64_t) { return std::make_unique<BcPolicy>(shared); };
}

std::uint64_t scene_hash(const std::vector<EnvState>& initial_states) {
    std::string bytes;
    auto put = [&](double v) { bytes.append(reinterpret_cast<const char*>(&v), sizeof v); };
    for (const auto& s : initial_states) {
        for (double v : s.agent) put(v);
        for (double v : s.goal) put(v);
        for (double v : s.block) put(v);
        put(s.theta);
        put(s.theta_rate);
        for (double v : s.appearance) put(v);
    }
    return fnv1a64(bytes);
}

const ComparisonRow& ComparisonReport::row(Method m, Hetero h) const {
    for (const auto& r : rows)
        if (r.method == m && r.hetero == h) return r;
    throw ValidationError("report has no row for " + to_string(m) + "/" + to_string(h));
}

PreparedData prepare_data(const PipelineConfig& cfg, const EnvConfig& env, bool mine) {
    PreparedData d;
    d.env = env;
    const auto t0 = std::chrono::steady_clock::now();
    d.dataset = collect_demos(env, cfg.demos, cfg.expert_noise, collection_seed(cfg));
    d.collect_seconds = since(t0);
    if (mine) d.mined = mine_dataset(d.dataset, cfg);
    return d;
}

void summarize(ComparisonRow& row) {
    double sum = 0.0;
    std::size_t k = 0, n = 0;
    for (const auto& s : row.per_seed) {
        sum += s.success_rate;
        k += s.successes;
        n += s.episodes;
    }
    row.mean = row.per_seed.empty() ? 0.0 : sum / static_cast<double>(row.per_seed.size());
    std::tie(row.wilson_low, row.wilson_high) = n == 0 ? std::pair{0.0, 0.0} : wilson_interval(k, n);
}

namespace {

SeedResult seed_result(const SeedOutcome& o) {
    SeedResult r;
    r.seed = o.seed;
    r.success_rate = o.success_rate;
    r.final_success_rate = o.success_rate;
    r.successes = o.successes;
    r.episodes = o.episodes;
    r.scene_hash = scene_hash(o.initial_states);
    return r;
}

// Best and most recent checkpoint evaluations.
struct Tracker {
    std::optional<SeedResult> best;
    double last = 0.0;
    void offer(SeedResult r, std::size_t epoch) {
        r.best_epoch = epoch;
        last = r.success_rate;
        if (!best || r.success_rate > best->success_rate) best = r;
    }
};

}  // namespace

ComparisonRow run_method(const PipelineConfig& cfg, const PreparedData& data, Method method) {
    ComparisonRow row;
    row.method = method;
    row.task = data.env.task;
    row.hetero = data.env.hetero;
    row.timings.collect = data.collect_seconds;
    const QueryConfig q = cfg.query_for(data.env);

    auto eval_one = [&](const PolicyFactory& f, std::uint64_t s) {
        const auto rep = evaluate(f, data.env, cfg.episodes, {s}, cfg.action_horizon, cfg.threads);
        row.timings.inference += rep.wall_seconds;
        return seed_result(rep.per_seed.at(0));
    };

    if (method == Method::RawKnn) {
        const auto factory = raw_knn_controller(data.dataset, q, cfg.horizon);
        for (std::uint64_t s : cfg.eval_seeds) row.per_seed.push_back(eval_one(factory, s));
        summarize(row);
        return row;
    }

    const bool retrieval = method != Method::BcMlp;
    PipelineConfig run = cfg;
    if (method == Method::HardRetrieval) run.weighting = Weighting::Hard;
    if (retrieval) row.timings.mining = data.mined.seconds;
    auto factory_for = [&](const Checkpoint& ck) {
        return retrieval ? class_controller(data.dataset, ck, q, cfg.horizon) : bc_controller(ck);
    };

    for (std::uint64_t s : cfg.eval_seeds) {
        Tracker tracker;
        EpochHook hook;
        if (cfg.eval_every > 0) {
            hook = [&](std::size_t epoch, const Checkpoint& snap) {
                if (epoch % cfg.eval_every == 0 || epoch == cfg.train.epochs) tracker.offer(eval_one(factory_for(snap), s), epoch);
            };
        }
        const auto model = retrieval ? train_class_model(data.dataset, data.mined, run, training_seed(cfg, s), hook)
                                     : train_bc_model(data.dataset, run, training_seed(cfg, s), hook);
        row.timings.training += model.seconds;
        if (cfg.eval_every == 0 || cfg.train.epochs == 0) {
            row.per_seed.push_back(eval_one(factory_for(model.checkpoint), s));
            continue;
        }
        SeedResult r = *tracker.best;
        r.final_success_rate = tracker.last;
        row.per_seed.push_back(r);
    }
    summarize(row);
    return row;
}

ComparisonReport compare(const PipelineConfig& cfg, const std::vector<Method>& methods, const std::vector<EnvConfig>& envs) {
    cfg.validate();
    if (methods.empty()) throw ValidationError("compare needs at least one method");
    if (envs.empty()) throw ValidationError("compare needs at least one environment");
    bool need_pairs = false;
    for (Method m : methods) need_pairs = need_pairs || m == Method::ClassRetrieval || m == Method::HardRetrieval;

    ComparisonReport rep;
    rep.config_hash = config_hash(cfg);
    rep.seed = cfg.seed;
    for (const auto& env : envs) {
        const PreparedData data = prepare_data(cfg, env, need_pairs);
        for (Method m : methods) rep.rows.push_back(run_method(cfg, data, m));
    }
    return rep;
}

ComparisonRow evaluate_controller(const PipelineConfig& cfg, const EnvConfig& env, Method method,
                                  const PolicyFactory& factory) {
    ComparisonRow row;
    row.method = method;
    row.task = env.task;
    row.hetero = env.hetero;
    const auto rep = evaluate(factory, env, cfg.episodes, cfg.eval_seeds, cfg.action_horizon, cfg.threads);
    row.timings.inference = rep.wall_seconds;
    for (const auto& o : rep.per_seed) row.per_seed.push_back(seed_result(o));
    summarize(row);
    return row;
}

namespace {

const std::vector<std::string> kColumns{"config_hash", "run_seed",    "method",      "task",           "hetero",
                                        "eval_seed",   "success_rate", "successes",  "episodes",       "scene_hash",
                                        "final_success_rate", "best_epoch", "mean", "wilson_low", "wilson_high"};

json record(const ComparisonReport& rep, const ComparisonRow& row, const SeedResult& s) {
    json j;
    j["config_hash"] = hex64(rep.config_hash);
    j["run_seed"] = rep.seed;
    j["method"] = to_string(row.method);
    j["task"] = to_string(row.task);
    j["hetero"] = to_string(row.hetero);
    j["eval_seed"] = s.seed;
    j["success_rate"] = s.success_rate;
    j["successes"] = s.successes;
    j["episodes"] = s.episodes;
    j["scene_hash"] = hex64(s.scene_hash);
    j["final_success_rate"] = s.final_success_rate;
    j["best_epoch"] = s.best_epoch ? json(*s.best_epoch) : json(nullptr);
    j["mean"] = row.mean;
    j["wilson_low"] = row.wilson_low;
    j["wilson_high"] = row.wilson_high;
    return j;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    return f;
}

std::string csv_cell(const json& v) {
    if (v.is_null()) return "";
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_float()) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
        return buf;
    }
    return v.dump();
}

std::uint64_t parse_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

}  // namespace

void write_report_jsonl(const ComparisonReport& report, const std::filesystem::path& path) {
    auto f = open_out(path);
    for (const auto& row : report.rows)
        for (const auto& s : row.per_seed) f << record(report, row, s).dump() << '\n';
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

void write_report_csv(const ComparisonReport& report, const std::filesystem::path& path) {
    auto f = open_out(path);
    for (std::size_t c = 0; c < kColumns.size(); ++c) f << (c ? "," : "") << kColumns[c];
    f << '\n';
    for (const auto& row : report.rows)
        for (const auto& s : row.per_seed) {
            const json j = record(report, row, s);
            for (std::size_t c = 0; c < kColumns.size(); ++c) f << (c ? "," : "") << csv_cell(j.at(kColumns[c]));
            f << '\n';
        }
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

void write_timings_jsonl(const ComparisonReport& report, const std::filesystem::path& path) {
    auto f = open_out(path);
    for (const auto& row : report.rows) {
        json j;
        j["config_hash"] = hex64(report.config_hash);
        j["method"] = to_string(row.method);
        j["task"] = to_string(row.task);
        j["hetero"] = to_string(row.hetero);
        j["t_collect"] = row.timings.collect;
        j["t_mining"] = row.timings.mining;
        j["t_training"] = row.timings.training;
        j["t_inference"] = row.timings.inference;
        f << j.dump() << '\n';
    }
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

ComparisonReport load_report_jsonl(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read '" + path.string() + "'");
    ComparisonReport rep;
    std::map<std::tuple<std::string, std::string, std::string>, std::size_t> slot;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            rep.config_hash = parse_hex(j.at("config_hash").get<std::string>());
            rep.seed = j.at("run_seed").get<std::uint64_t>();
            const auto key = std::tuple{j.at("method").get<std::string>(), j.at("task").get<std::string>(),
                                        j.at("hetero").get<std::string>()};
            auto it = slot.find(key);
            if (it == slot.end()) {
                ComparisonRow row;
                row.method = parse_method(std::get<0>(key));
                row.task = parse_task(std::get<1>(key));
                row.hetero = parse_hetero(std::get<2>(key));
                row.mean = j.at("mean").get<double>();
                row.wilson_low = j.at("wilson_low").get<double>();
                row.wilson_high = j.at("wilson_high").get<double>();
                it = slot.emplace(key, rep.rows.size()).first;
                rep.rows.push_back(std::move(row));
            }
            SeedResult s;
            s.seed = j.at("eval_seed").get<std::uint64_t>();
            s.success_rate = j.at("success_rate").get<double>();
            s.successes = j.at("successes").get<std::size_t>();
            s.episodes = j.at("episodes").get<std::size_t>();
            s.scene_hash = parse_hex(j.at("scene_hash").get<std::string>());
            s.final_success_rate = j.at("final_success_rate").get<double>();
            if (!j.at("best_epoch").is_null()) s.best_epoch = j.at("best_epoch").get<std::size_t>();
            rep.rows[it->second].per_seed.push_back(s);
        } catch (const json::exception& e) {
            throw CorruptFileError("'" + path.string() + "' line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rep;
}

}  // namespace classkit
