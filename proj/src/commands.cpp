#include "classkit/commands.hpp"

#include <fstream>
#include <iostream>
#include <random>

#include <json.hpp>

#include "classkit/ablation.hpp"
#include "classkit/config.hpp"
#include "classkit/contrastive.hpp"
#include "classkit/evalreport.hpp"

namespace fs = std::filesystem;

namespace classkit {

using nlohmann::json;

PipelineConfig resolve_config(const CliOptions& opts, const char* env_seed) {
    PipelineConfig c = opts.config ? load_config(*opts.config) : PipelineConfig{};
    std::vector<std::string> errors;
    if (env_seed) {
        try {
            std::size_t used = 0;
            c.seed = std::stoull(env_seed, &used);
            if (used != std::string(env_seed).size()) throw std::invalid_argument("trailing characters");
        } catch (const std::exception&) {
            errors.push_back(std::string("CLASSKIT_SEED: not an unsigned integer: '") + env_seed + "'");
        }
    }
    if (opts.seed) c.seed = *opts.seed;
    if (opts.threads) c.threads = *opts.threads;
    if (opts.k_quantile) c.k_quantile = *opts.k_quantile;
    if (opts.window) c.dtw_window = *opts.window;
    if (opts.eval_every) c.eval_every = *opts.eval_every;
    auto flag = [&](const std::optional<std::string>& v, const char* name, auto apply) {
        if (!v) return;
        try {
            apply(*v);
        } catch (const ValidationError& e) {
            errors.push_back(std::string("--") + name + ": " + e.what());
        }
    };
    flag(opts.metric, "metric", [&](const std::string& s) { c.metric = parse_metric(s); });
    flag(opts.weighting, "weighting", [&](const std::string& s) { c.weighting = parse_weighting(s); });
    flag(opts.hetero, "hetero", [&](const std::string& s) { c.env.hetero = parse_hetero(s); });
    for (auto& v : c.violations()) errors.push_back(std::move(v));
    if (!errors.empty()) {
        std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                          (errors.size() == 1 ? "" : "s") + "):";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ValidationError(msg);
    }
    return c;
}

fs::path meta_path(const fs::path& artifact) { return fs::path(artifact.string() + ".meta.json"); }

namespace {

void write_meta(const PipelineConfig& cfg, const fs::path& artifact, const std::string& command, json extra = json::object()) {
    json m = std::move(extra);
    m["artifact"] = artifact.filename().string();
    m["command"] = command;
    m["config_hash"] = hex64(config_hash(cfg));
    m["seed"] = cfg.seed;
    m["config"] = config_to_json(cfg);
    std::ofstream f(meta_path(artifact), std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + meta_path(artifact).string() + "'");
    f << m.dump(2) << '\n';
}

json read_meta(const fs::path& artifact) {
    std::ifstream f(meta_path(artifact));
    if (!f) return json::object();
    try {
        return json::parse(f);
    } catch (const json::exception&) {
        throw CorruptFileError("unreadable metadata '" + meta_path(artifact).string() + "'");
    }
}

fs::path require(const fs::path& out, const char* name, const char* producer) {
    const fs::path p = out / name;
    if (!fs::exists(p))
        throw ValidationError("missing upstream artifact '" + p.string() + "' (run `" + producer + "` first)");
    return p;
}

void prepare_out(const fs::path& out) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw IoError("cannot create output directory '" + out.string() + "': " + ec.message());
}

// Warns when an input artifact was produced under a different configuration.
void check_hash(const PipelineConfig& cfg, const fs::path& artifact, CommandResult& r) {
    const json m = read_meta(artifact);
    if (m.contains("config_hash") && m["config_hash"] != hex64(config_hash(cfg)))
        r.warnings.push_back("'" + artifact.string() + "' was produced under config " + m["config_hash"].get<std::string>() +
                             ", current config is " + hex64(config_hash(cfg)));
}

json mining_settings(const PipelineConfig& cfg) {
    return {{"window", cfg.dtw_window},
            {"metric", to_string(cfg.metric)},
            {"k_quantile", cfg.k_quantile},
            {"dim_scale", cfg.dim_scale},
            {"exclusion_margin", cfg.exclusion_margin},
            {"window_stride", cfg.train.window_stride}};
}

Dataset load_input_dataset(const PipelineConfig& cfg, const fs::path& out, CommandResult& r) {
    const fs::path p = require(out, artifact::dataset, "collect");
    check_hash(cfg, p, r);
    return load_dataset(p);
}

// Pairs must come from the same mining settings the current config asks for.
MinedPairs load_input_pairs(const PipelineConfig& cfg, const fs::path& out, CommandResult& r) {
    const fs::path p = require(out, artifact::pairs, "mine");
    const json m = read_meta(p);
    const json want = mining_settings(cfg);
    if (m.contains("mining") && m["mining"] != want)
        throw ValidationError("'" + p.string() + "' was mined with " + m["mining"].dump() + " but the config asks for " +
                              want.dump() + "; rerun `mine`");
    check_hash(cfg, p, r);
    auto loaded = load_pair_table(p);
    MinedPairs mp;
    mp.table = std::move(loaded.table);
    mp.weights = std::move(loaded.weights);
    return mp;
}

Checkpoint load_input_checkpoint(const PipelineConfig& cfg, const fs::path& out, const char* name, const char* producer,
                                 CommandResult& r) {
    const fs::path p = require(out, name, producer);
    auto loaded = load_checkpoint(p, config_hash(cfg));
    for (auto& w : loaded.warnings) r.warnings.push_back(std::move(w));
    return std::move(loaded.checkpoint);
}

const char* encoder_file(const PipelineConfig& cfg) {
    return cfg.weighting == Weighting::Hard ? artifact::encoder_hard : artifact::encoder;
}

}  // namespace

CommandResult cmd_collect(const PipelineConfig& cfg, const fs::path& out) {
    prepare_out(out);
    CommandResult r;
    const Dataset ds = collect_demos(cfg.env, cfg.demos, cfg.expert_noise, collection_seed(cfg));
    const fs::path p = out / artifact::dataset;
    save_dataset(ds, p);
    write_meta(cfg, p, "collect", {{"demos", ds.size()}, {"task", to_string(cfg.env.task)}, {"hetero", to_string(cfg.env.hetero)}});
    r.written.push_back(p);
    return r;
}

CommandResult cmd_mine(const PipelineConfig& cfg, const fs::path& out) {
    CommandResult r;
    const Dataset ds = load_input_dataset(cfg, out, r);
    const MinedPairs mp = mine_dataset(ds, cfg);
    const fs::path p = out / artifact::pairs;
    save_pair_table(mp.table, mp.weights, p);
    write_meta(cfg, p, "mine",
               {{"mining", mining_settings(cfg)},
                {"pairs", mp.table.pairs.size()},
                {"eligible", mp.table.eligible_count},
                {"threshold", mp.table.threshold}});
    r.written.push_back(p);
    return r;
}

CommandResult cmd_train(const PipelineConfig& cfg, const fs::path& out) {
    CommandResult r;
    const Dataset ds = load_input_dataset(cfg, out, r);
    const MinedPairs mp = load_input_pairs(cfg, out, r);
    auto model = train_class_model(ds, mp, cfg, training_seed(cfg, cfg.eval_seeds.front()));
    model.checkpoint.config_hash = config_hash(cfg);
    const fs::path p = out / encoder_file(cfg);
    save_checkpoint(model.checkpoint, p);
    write_meta(cfg, p, "train",
               {{"weighting", to_string(cfg.weighting)},
                {"steps", model.checkpoint.step},
                {"final_loss", model.loss_trace.empty() ? json(nullptr) : json(model.loss_trace.back())}});
    r.written.push_back(p);
    return r;
}

CommandResult cmd_train_bc(const PipelineConfig& cfg, const fs::path& out) {
    CommandResult r;
    const Dataset ds = load_input_dataset(cfg, out, r);
    auto model = train_bc_model(ds, cfg, training_seed(cfg, cfg.eval_seeds.front()));
    model.checkpoint.config_hash = config_hash(cfg);
    const fs::path p = out / artifact::bc;
    save_checkpoint(model.checkpoint, p);
    write_meta(cfg, p, "train-bc",
               {{"steps", model.checkpoint.step},
                {"final_loss", model.loss_trace.empty() ? json(nullptr) : json(model.loss_trace.back())}});
    r.written.push_back(p);
    return r;
}

CommandResult cmd_eval(const PipelineConfig& cfg, const fs::path& out) {
    CommandResult r;
    const Dataset ds = load_input_dataset(cfg, out, r);
    ComparisonReport rep;
    rep.config_hash = config_hash(cfg);
    rep.seed = cfg.seed;
    const QueryConfig q = cfg.query_for(cfg.env);

    if (cfg.eval_every > 0) {
        // Periodic evaluation needs the training run itself: retrain per seed from the artifacts.
        PreparedData data;
        data.env = cfg.env;
        data.dataset = ds;
        bool need_pairs = false;
        for (Method m : cfg.methods) need_pairs = need_pairs || m == Method::ClassRetrieval || m == Method::HardRetrieval;
        if (need_pairs) data.mined = load_input_pairs(cfg, out, r);
        for (Method m : cfg.methods) rep.rows.push_back(run_method(cfg, data, m));
    } else {
        for (Method m : cfg.methods) {
            PolicyFactory f;
            switch (m) {
                case Method::RawKnn: f = raw_knn_controller(ds, q, cfg.horizon); break;
                case Method::BcMlp: f = bc_controller(load_input_checkpoint(cfg, out, artifact::bc, "train-bc", r)); break;
                case Method::ClassRetrieval:
                case Method::HardRetrieval: {
                    PipelineConfig tcfg = cfg;
                    tcfg.weighting = m == Method::HardRetrieval ? Weighting::Hard : cfg.weighting;
                    const char* producer = tcfg.weighting == Weighting::Hard ? "train --weighting hard" : "train";
                    f = class_controller(ds, load_input_checkpoint(cfg, out, encoder_file(tcfg), producer, r), q,
                                         cfg.horizon);
                    break;
                }
            }
            rep.rows.push_back(evaluate_controller(cfg, cfg.env, m, f));
        }
    }
    for (const char* name : {artifact::eval_jsonl, artifact::eval_csv, artifact::eval_timings}) {
        const fs::path p = out / name;
        if (name == artifact::eval_jsonl) write_report_jsonl(rep, p);
        else if (name == artifact::eval_csv) write_report_csv(rep, p);
        else write_timings_jsonl(rep, p);
        write_meta(cfg, p, "eval");
        r.written.push_back(p);
    }
    return r;
}

CommandResult cmd_ablate(const PipelineConfig& cfg, const fs::path& out, const std::vector<std::string>& axes) {
    prepare_out(out);
    CommandResult r;
    const AblationGrid full = AblationGrid::full();
    AblationGrid grid;
    const std::vector<std::string> names = axes.empty() ? full.axis_names() : axes;
    for (const auto& a : names) {
        if (a == "weighting") grid.weighting = full.weighting;
        else if (a == "window") grid.windows = full.windows;
        else if (a == "metric") grid.metrics = full.metrics;
        else if (a == "k_quantile") grid.k_quantiles = full.k_quantiles;
        else throw ValidationError("unknown ablation axis '" + a + "' (expected weighting|window|metric|k_quantile)");
    }
    std::vector<Hetero> modes{Hetero::Fixed};
    modes.push_back(cfg.env.hetero == Hetero::Fixed ? Hetero::RandRot : cfg.env.hetero);
    const AblationReport rep = run_ablation(cfg, grid, modes);
    const json extra{{"axes", grid.axis_names()}};
    const fs::path pj = out / artifact::ablation_jsonl;
    const fs::path pc = out / artifact::ablation_csv;
    write_ablation_jsonl(rep, pj);
    write_ablation_csv(rep, pc);
    write_meta(cfg, pj, "ablate", extra);
    write_meta(cfg, pc, "ablate", extra);
    r.written = {pj, pc};
    return r;
}

CommandResult cmd_diag_kl(const PipelineConfig& cfg, const fs::path& out, std::size_t batches) {
    if (batches == 0) throw ValidationError("--batches must be >= 1");
    CommandResult r;
    const Dataset ds = load_input_dataset(cfg, out, r);
    const MinedPairs mp = load_input_pairs(cfg, out, r);
    const Checkpoint ck = load_input_checkpoint(cfg, out, encoder_file(cfg), "train", r);
    const SoftWeights weights = weights_for(mp, cfg.weighting);
    std::vector<WindowIndex> windows;
    for (const auto& w : enumerate_windows(ds, cfg.dtw_window, cfg.train.window_stride)) windows.push_back(w.index);
    if (windows.size() != mp.table.window_count)
        throw ValidationError("pair table covers " + std::to_string(mp.table.window_count) + " windows, dataset has " +
                              std::to_string(windows.size()) + "; rerun `mine`");

    std::mt19937_64 rng(derive_seed(cfg.seed, 0xD1A6));
    const fs::path p = out / artifact::diag_kl;
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + p.string() + "'");
    for (std::size_t b = 0; b < batches; ++b) {
        const Batch batch = build_batch(ds, windows, weights, cfg.train.batch_size, rng);
        const Matrix unit = normalize_rows(encode(ck.ema, batch.obs)).unit;
        const BatchSimilarity sim = similarity_matrix(unit, cfg.train.tau);
        const LossReport loss = soft_infonce(sim, batch.weights);
        const auto div = kl_decomposition(sim, batch.weights);
        for (std::size_t i = 0; i < div.size(); ++i) {
            if (!div[i]) continue;
            const WindowIndex w = windows[batch.ordinals[i]];
            const double l = *loss.per_anchor[i];
            json j{{"batch", b},
                   {"anchor", i},
                   {"demo", ds.demos[w.demo_ord].id},
                   {"t", w.t},
                   {"loss", l},
                   {"kl", div[i]->kl},
                   {"entropy", div[i]->entropy},
                   {"residual", l - div[i]->kl - div[i]->entropy}};
            f << j.dump() << '\n';
        }
    }
    if (!f) throw IoError("write failed for '" + p.string() + "'");
    f.close();
    write_meta(cfg, p, "diag-kl", {{"batches", batches}, {"tau", cfg.train.tau}});
    r.written.push_back(p);
    return r;
}

CommandResult cmd_export_embeddings(const PipelineConfig& cfg, const fs::path& out) {
    CommandResult r;
    const Dataset ds = load_input_dataset(cfg, out, r);
    const Checkpoint ck = load_input_checkpoint(cfg, out, encoder_file(cfg), "train", r);
    if (ck.spec().input_dim != ds.obs_dim())
        throw ValidationError("encoder expects " + std::to_string(ck.spec().input_dim) + " observation features, dataset has " +
                              std::to_string(ds.obs_dim()));
    const fs::path p = out / artifact::embeddings;
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + p.string() + "'");
    const std::size_t d = ck.spec().output_dim;
    std::size_t rows = 0;
    f << "demo,t";
    for (std::size_t k = 0; k < d; ++k) f << ",z" << k;
    f << '\n';
    char buf[32];
    for (const auto& demo : ds.demos) {
        Matrix obs(demo.length(), ds.obs_dim());
        for (std::size_t t = 0; t < demo.length(); ++t) std::copy(demo.observations[t].begin(), demo.observations[t].end(), obs.row(t).begin());
        const Matrix unit = normalize_rows(encode(ck.ema, obs)).unit;
        rows += demo.length();
        for (std::size_t t = 0; t < demo.length(); ++t) {
            f << demo.id << ',' << t;
            for (double v : unit.row(t)) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                f << ',' << buf;
            }
            f << '\n';
        }
    }
    if (!f) throw IoError("write failed for '" + p.string() + "'");
    f.close();
    write_meta(cfg, p, "export-embeddings", {{"latent_dim", d}, {"rows", rows}});
    r.written.push_back(p);
    return r;
}

const std::vector<std::string>& command_names() {
    static const std::vector<std::string> names{"collect", "mine", "train", "train-bc", "eval", "ablate", "diag-kl",
                                                "export-embeddings"};
    return names;
}

int run_command(const std::string& name, const CliOptions& opts, const char* env_seed, std::ostream& out,
                std::ostream& err) {
    try {
        const PipelineConfig cfg = resolve_config(opts, env_seed);
        CommandResult r;
        if (name == "collect") r = cmd_collect(cfg, opts.out);
        else if (name == "mine") r = cmd_mine(cfg, opts.out);
        else if (name == "train") r = cmd_train(cfg, opts.out);
        else if (name == "train-bc") r = cmd_train_bc(cfg, opts.out);
        else if (name == "eval") r = cmd_eval(cfg, opts.out);
        else if (name == "ablate") r = cmd_ablate(cfg, opts.out, opts.axes);
        else if (name == "diag-kl") r = cmd_diag_kl(cfg, opts.out, opts.diag_batches);
        else if (name == "export-embeddings") r = cmd_export_embeddings(cfg, opts.out);
        else throw ValidationError("unknown command '" + name + "'");
        for (const auto& w : r.warnings) err << "warning: " << w << '\n';
        for (const auto& p : r.written) out << p.string() << '\n';
        return 0;
    } catch (const ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace classkit
