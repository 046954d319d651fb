#include "classkit/ablation.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <tuple>

#include <json.hpp>

#include "classkit/config.hpp"

namespace classkit {

using nlohmann::json;

namespace {

template <typename T>
std::size_t axis_size(const std::vector<T>& v) {
    return v.empty() ? 1 : v.size();
}

template <typename T>
std::vector<T> axis_or(const std::vector<T>& v, T fallback) {
    return v.empty() ? std::vector<T>{fallback} : v;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::size_t AblationGrid::cell_count() const {
    return axis_size(weighting) * axis_size(windows) * axis_size(metrics) * axis_size(k_quantiles);
}

std::vector<std::string> AblationGrid::axis_names() const {
    std::vector<std::string> names;
    if (!weighting.empty()) names.emplace_back("weighting");
    if (!windows.empty()) names.emplace_back("window");
    if (!metrics.empty()) names.emplace_back("metric");
    if (!k_quantiles.empty()) names.emplace_back("k_quantile");
    return names;
}

AblationGrid AblationGrid::full() {
    return {{Weighting::Soft, Weighting::Hard}, {1, 4, 8, 16}, {SeqMetric::DTW, SeqMetric::L2}, {0.005, 0.01, 0.025, 0.05, 0.1}};
}

const AblationEnvResult& AblationRow::env(Hetero h) const {
    for (const auto& e : envs)
        if (e.hetero == h) return e;
    throw ValidationError("ablation row has no result for " + to_string(h));
}

std::vector<AblationCell> expand_grid(const PipelineConfig& base, const AblationGrid& grid) {
    if (grid.empty()) throw ValidationError("ablation grid has no axes");
    std::vector<AblationCell> cells;
    for (Weighting w : axis_or(grid.weighting, base.weighting))
        for (std::size_t t : axis_or(grid.windows, base.dtw_window))
            for (SeqMetric m : axis_or(grid.metrics, base.metric))
                for (double k : axis_or(grid.k_quantiles, base.k_quantile)) cells.push_back({w, t, m, k});
    return cells;
}

AblationReport run_ablation(const PipelineConfig& base, const AblationGrid& grid, const std::vector<Hetero>& modes) {
    base.validate();
    const auto cells = expand_grid(base, grid);
    if (modes.empty()) throw ValidationError("ablation needs at least one environment mode");
    for (const auto& c : cells) {
        PipelineConfig probe = base;
        probe.weighting = c.weighting;
        probe.dtw_window = c.window;
        probe.metric = c.metric;
        probe.k_quantile = c.k_quantile;
        probe.validate();
    }

    AblationReport rep;
    rep.config_hash = config_hash(base);
    rep.seed = base.seed;
    rep.task = base.env.task;
    rep.axes = grid.axis_names();
    rep.rows.resize(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) rep.rows[c].cell = cells[c];

    for (Hetero h : modes) {
        EnvConfig env = base.env;
        env.hetero = h;
        PreparedData data = prepare_data(base, env, false);
        std::map<std::tuple<std::size_t, int, double>, MinedPairs> mined;
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto& cell = cells[c];
            PipelineConfig cfg = base;
            cfg.env = env;
            cfg.weighting = cell.weighting;
            cfg.dtw_window = cell.window;
            cfg.metric = cell.metric;
            cfg.k_quantile = cell.k_quantile;
            const auto key = std::tuple{cell.window, static_cast<int>(cell.metric), cell.k_quantile};
            auto it = mined.find(key);
            if (it == mined.end()) it = mined.emplace(key, mine_dataset(data.dataset, cfg)).first;
            data.mined = it->second;

            const ComparisonRow row = run_method(cfg, data, Method::ClassRetrieval);
            AblationEnvResult r;
            r.hetero = h;
            r.per_seed = row.per_seed;
            r.mean = row.mean;
            r.wilson_low = row.wilson_low;
            r.wilson_high = row.wilson_high;
            r.mining_seconds = row.timings.mining;
            r.training_seconds = row.timings.training;
            r.pair_count = data.mined.table.pairs.size();
            r.threshold = data.mined.table.threshold;
            rep.rows[c].envs.push_back(std::move(r));
        }
    }
    return rep;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write '" + path.string() + "'");
    return f;
}

}  // namespace

void write_ablation_jsonl(const AblationReport& report, const std::filesystem::path& path) {
    auto f = open_out(path);
    for (const auto& row : report.rows)
        for (const auto& e : row.envs)
            for (const auto& s : e.per_seed) {
                json j;
                j["config_hash"] = hex64(report.config_hash);
                j["run_seed"] = report.seed;
                j["task"] = to_string(report.task);
                j["weighting"] = to_string(row.cell.weighting);
                j["window"] = row.cell.window;
                j["metric"] = to_string(row.cell.metric);
                j["k_quantile"] = row.cell.k_quantile;
                j["hetero"] = to_string(e.hetero);
                j["eval_seed"] = s.seed;
                j["success_rate"] = s.success_rate;
                j["successes"] = s.successes;
                j["episodes"] = s.episodes;
                j["scene_hash"] = hex64(s.scene_hash);
                j["mean"] = e.mean;
                j["wilson_low"] = e.wilson_low;
                j["wilson_high"] = e.wilson_high;
                j["pair_count"] = e.pair_count;
                j["threshold"] = e.threshold;
                f << j.dump() << '\n';
            }
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

void write_ablation_csv(const AblationReport& report, const std::filesystem::path& path) {
    auto f = open_out(path);
    f << "weighting,window,metric,k_quantile";
    if (!report.rows.empty())
        for (const auto& e : report.rows.front().envs) {
            const std::string h = to_string(e.hetero);
            f << ',' << h << "_mean," << h << "_wilson_low," << h << "_wilson_high," << h << "_pairs";
        }
    f << '\n';
    for (const auto& row : report.rows) {
        f << to_string(row.cell.weighting) << ',' << row.cell.window << ',' << to_string(row.cell.metric) << ','
          << num(row.cell.k_quantile);
        for (const auto& e : row.envs)
            f << ',' << num(e.mean) << ',' << num(e.wilson_low) << ',' << num(e.wilson_high) << ',' << e.pair_count;
        f << '\n';
    }
    if (!f) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace classkit
