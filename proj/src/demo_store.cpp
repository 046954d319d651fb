#include "classkit/demo_store.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace classkit {

using nlohmann::json;

std::size_t Dataset::total_timesteps() const {
    std::size_t n = 0;
    for (const auto& d : demos) n += d.length();
    return n;
}

std::size_t Dataset::obs_dim() const { return demos.empty() ? 0 : demos.front().observations.front().size(); }
std::size_t Dataset::proprio_dim() const { return demos.empty() ? 0 : demos.front().proprio.front().size(); }
std::size_t Dataset::action_dim() const { return demos.empty() ? 0 : demos.front().actions.front().size(); }

namespace {

void check_field(const Demonstration& demo, const std::vector<Vec>& rows, const char* field) {
    auto fail = [&](const std::string& why) {
        throw ValidationError("demo '" + demo.id + "' field '" + field + "': " + why);
    };
    if (rows.size() != demo.actions.size())
        fail("length " + std::to_string(rows.size()) + " differs from actions length " +
             std::to_string(demo.actions.size()));
    const std::size_t dim = rows.front().size();
    for (std::size_t t = 0; t < rows.size(); ++t) {
        if (rows[t].size() != dim) fail("inconsistent dimension at t=" + std::to_string(t));
        if (!all_finite(rows[t])) fail("non-finite value at t=" + std::to_string(t));
    }
}

}  // namespace

void validate(const Demonstration& demo) {
    if (demo.id.empty()) throw ValidationError("demonstration with empty id");
    if (demo.actions.empty()) throw ValidationError("demo '" + demo.id + "' field 'actions': empty");
    check_field(demo, demo.actions, "actions");
    check_field(demo, demo.observations, "obs");
    check_field(demo, demo.proprio, "proprio");
}

void validate(const Dataset& dataset) {
    if (dataset.empty()) return;
    const auto& first = dataset.demos.front();
    std::map<std::string, int> seen;
    for (const auto& d : dataset.demos) {
        validate(d);
        if (seen[d.id]++) throw ValidationError("duplicate demo id '" + d.id + "'");
        if (d.observations.front().size() != first.observations.front().size() ||
            d.proprio.front().size() != first.proprio.front().size() ||
            d.actions.front().size() != first.actions.front().size())
            throw ValidationError("demo '" + d.id + "' dimensions differ from demo '" + first.id + "'");
    }
}

namespace {

json rows_to_json(const std::vector<Vec>& rows) {
    json arr = json::array();
    for (const auto& r : rows) arr.push_back(r);
    return arr;
}

std::vector<Vec> rows_from_json(const json& j, const char* key, std::size_t line) {
    if (!j.contains(key) || !j.at(key).is_array())
        throw ValidationError("line " + std::to_string(line) + ": missing array field '" + key + "'");
    std::vector<Vec> rows;
    for (const auto& r : j.at(key)) {
        if (!r.is_array())
            throw ValidationError("line " + std::to_string(line) + ": field '" + key + "' must hold arrays");
        Vec v;
        v.reserve(r.size());
        for (const auto& x : r) {
            if (!x.is_number())
                throw ValidationError("line " + std::to_string(line) + ": non-numeric entry in '" + key + "'");
            v.push_back(x.get<double>());
        }
        rows.push_back(std::move(v));
    }
    return rows;
}

}  // namespace

std::string dump_dataset(const Dataset& dataset) {
    std::string out;
    for (const auto& d : dataset.demos) {
        json j;
        j["id"] = d.id;
        j["obs"] = rows_to_json(d.observations);
        j["proprio"] = rows_to_json(d.proprio);
        j["actions"] = rows_to_json(d.actions);
        j["meta"] = d.meta;
        out += j.dump();
        out += '\n';
    }
    return out;
}

Dataset parse_dataset(std::string_view text) {
    Dataset ds;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;

        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object()) throw ValidationError("line " + std::to_string(line_no) + ": expected an object");
        Demonstration d;
        if (!j.contains("id") || !j["id"].is_string())
            throw ValidationError("line " + std::to_string(line_no) + ": missing string field 'id'");
        d.id = j["id"].get<std::string>();
        d.observations = rows_from_json(j, "obs", line_no);
        d.proprio = rows_from_json(j, "proprio", line_no);
        d.actions = rows_from_json(j, "actions", line_no);
        if (j.contains("meta")) {
            for (const auto& [k, v] : j["meta"].items()) {
                if (!v.is_string())
                    throw ValidationError("line " + std::to_string(line_no) + ": meta values must be strings");
                d.meta[k] = v.get<std::string>();
            }
        }
        ds.demos.push_back(std::move(d));
    }
    validate(ds);
    return ds;
}

Dataset load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_dataset(buf.str());
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    validate(dataset);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write dataset '" + path.string() + "'");
    out << dump_dataset(dataset);
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

ActionWindow action_window(const Dataset& dataset, WindowIndex index, std::size_t horizon) {
    if (horizon == 0) throw ValidationError("window horizon must be >= 1");
    if (index.demo_ord >= dataset.size()) throw ValidationError("window demo ordinal out of range");
    const auto& acts = dataset.demos[index.demo_ord].actions;
    if (index.t >= acts.size()) throw ValidationError("window timestep out of range");
    ActionWindow w{index, {}};
    w.actions.reserve(horizon);
    for (std::size_t k = 0; k < horizon; ++k) w.actions.push_back(acts[std::min(index.t + k, acts.size() - 1)]);
    return w;
}

std::vector<ActionWindow> enumerate_windows(const Dataset& dataset, std::size_t horizon, std::size_t stride) {
    if (dataset.empty()) throw ValidationError("cannot enumerate windows of an empty dataset");
    if (horizon == 0 || stride == 0) throw ValidationError("horizon and stride must be >= 1");
    std::vector<ActionWindow> out;
    for (std::size_t d = 0; d < dataset.size(); ++d)
        for (std::size_t t = 0; t < dataset.demos[d].length(); t += stride)
            out.push_back(action_window(dataset, {d, t}, horizon));
    return out;
}

std::pair<const Vec&, const Vec&> observation_at(const Dataset& dataset, WindowIndex index) {
    if (index.demo_ord >= dataset.size()) throw ValidationError("demo ordinal out of range");
    const auto& d = dataset.demos[index.demo_ord];
    if (index.t >= d.length())
        throw ValidationError("timestep " + std::to_string(index.t) + " out of range for demo '" + d.id + "'");
    return {d.observations[index.t], d.proprio[index.t]};
}

}  // namespace classkit
