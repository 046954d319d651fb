#include "classkit/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <type_traits>

namespace classkit {

using nlohmann::json;

json config_to_json(const PipelineConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["env"] = {{"task", to_string(c.env.task)},
                {"hetero", to_string(c.env.hetero)},
                {"dyn_rot_rate", c.env.dyn_rot_rate},
                {"appearance_dim", c.env.appearance_dim},
                {"success_radius", c.env.success_radius},
                {"max_steps", c.env.max_steps},
                {"action_clip", c.env.action_clip},
                {"agent_radius", c.env.agent_radius},
                {"block_radius", c.env.block_radius}};
    j["collect"] = {{"demos", c.demos}, {"expert_noise", c.expert_noise}};
    j["mining"] = {{"window", c.dtw_window},
                   {"metric", to_string(c.metric)},
                   {"dim_scale", c.dim_scale},
                   {"k_quantile", c.k_quantile},
                   {"exclusion_margin", c.exclusion_margin},
                   {"weighting", to_string(c.weighting)}};
    j["encoder"] = {{"hidden_dims", c.hidden_dims}, {"latent_dim", c.latent_dim}, {"activation", to_string(c.activation)}};
    const auto& t = c.train;
    j["train"] = {{"batch_size", t.batch_size},
                  {"learning_rate", t.learning_rate},
                  {"momentum", t.momentum},
                  {"weight_decay", t.weight_decay},
                  {"tau", t.tau},
                  {"epochs", t.epochs},
                  {"warmup_steps", t.warmup_steps},
                  {"grad_clip_norm", t.grad_clip_norm},
                  {"ema_power", t.ema_power},
                  {"optimizer", to_string(t.optimizer)},
                  {"trust_coeff", t.trust_coeff},
                  {"window_stride", t.window_stride},
                  {"augment", {{"noise_sigma", t.augment.noise_sigma}, {"mask_prob", t.augment.mask_prob}}}};
    j["bc"] = {{"head_dims", c.bc_head_dims}};
    std::vector<std::string> methods;
    for (Method m : c.methods) methods.push_back(to_string(m));
    j["eval"] = {{"k_nn", c.query.k_nn},
                 {"tau_nn", c.query.tau_nn},
                 {"tau_nn_fixed", c.tau_nn_fixed},
                 {"horizon", c.horizon},
                 {"action_horizon", c.action_horizon},
                 {"episodes", c.episodes},
                 {"seeds", c.eval_seeds},
                 {"methods", methods},
                 {"eval_every", c.eval_every}};
    return j;
}

namespace {

// Walks one section, reading known keys and flagging everything else.
class Reader {
public:
    explicit Reader(std::vector<std::string>& errors) : errors_(errors) {}

    void section(const json& doc, const std::string& name, const std::map<std::string, std::function<void(const json&)>>& keys) {
        const std::string prefix = name.empty() ? "" : name + ".";
        if (!doc.is_object()) {
            errors_.push_back((name.empty() ? std::string("config") : name) + ": expected an object");
            return;
        }
        for (const auto& [k, v] : doc.items()) {
            const auto it = keys.find(k);
            if (it == keys.end()) {
                errors_.push_back(prefix + k + ": unknown key");
                continue;
            }
            try {
                it->second(v);
            } catch (const json::exception&) {
                errors_.push_back(prefix + k + ": wrong type");
            } catch (const ValidationError& e) {
                errors_.push_back(prefix + k + ": " + e.what());
            }
        }
    }

private:
    std::vector<std::string>& errors_;
};

template <typename T>
struct is_vector : std::false_type {};
template <typename U>
struct is_vector<std::vector<U>> : std::true_type {};

template <typename T>
void check_value(const json& v) {
    bool ok = true;
    if constexpr (std::is_floating_point_v<T>) {
        ok = v.is_number();
    } else if constexpr (std::is_integral_v<T>) {
        ok = v.is_number_unsigned() || (v.is_number_integer() && v.template get<long long>() >= 0);
    } else if constexpr (is_vector<T>::value) {
        ok = v.is_array();
        if (ok)
            for (const auto& e : v) check_value<typename T::value_type>(e);
    }
    if (!ok) throw json::type_error::create(302, "unexpected value type", &v);
}

template <typename T>
std::function<void(const json&)> into(T& field) {
    return [&field](const json& v) {
        check_value<T>(v);
        field = v.template get<T>();
    };
}

template <typename T, typename Parse>
std::function<void(const json&)> parsed(T& field, Parse parse) {
    return [&field, parse](const json& v) { field = parse(v.get<std::string>()); };
}

}  // namespace

PipelineConfig config_from_json(const json& doc) {
    PipelineConfig c;
    std::vector<std::string> errors;
    Reader rd(errors);
    std::vector<std::string> methods;
    bool have_methods = false;

    rd.section(doc, "",
               {{"seed", into(c.seed)},
                {"threads", into(c.threads)},
                {"env",
                 [&](const json& s) {
                     rd.section(s, "env",
                                {{"task", parsed(c.env.task, parse_task)},
                                 {"hetero", parsed(c.env.hetero, parse_hetero)},
                                 {"dyn_rot_rate", into(c.env.dyn_rot_rate)},
                                 {"appearance_dim", into(c.env.appearance_dim)},
                                 {"success_radius", into(c.env.success_radius)},
                                 {"max_steps", into(c.env.max_steps)},
                                 {"action_clip", into(c.env.action_clip)},
                                 {"agent_radius", into(c.env.agent_radius)},
                                 {"block_radius", into(c.env.block_radius)}});
                 }},
                {"collect",
                 [&](const json& s) {
                     rd.section(s, "collect", {{"demos", into(c.demos)}, {"expert_noise", into(c.expert_noise)}});
                 }},
                {"mining",
                 [&](const json& s) {
                     rd.section(s, "mining",
                                {{"window", into(c.dtw_window)},
                                 {"metric", parsed(c.metric, parse_metric)},
                                 {"dim_scale", into(c.dim_scale)},
                                 {"k_quantile", into(c.k_quantile)},
                                 {"exclusion_margin", into(c.exclusion_margin)},
                                 {"weighting", parsed(c.weighting, parse_weighting)}});
                 }},
                {"encoder",
                 [&](const json& s) {
                     rd.section(s, "encoder",
                                {{"hidden_dims", into(c.hidden_dims)},
                                 {"latent_dim", into(c.latent_dim)},
                                 {"activation", parsed(c.activation, parse_activation)}});
                 }},
                {"train",
                 [&](const json& s) {
                     auto& t = c.train;
                     rd.section(s, "train",
                                {{"batch_size", into(t.batch_size)},
                                 {"learning_rate", into(t.learning_rate)},
                                 {"momentum", into(t.momentum)},
                                 {"weight_decay", into(t.weight_decay)},
                                 {"tau", into(t.tau)},
                                 {"epochs", into(t.epochs)},
                                 {"warmup_steps", into(t.warmup_steps)},
                                 {"grad_clip_norm", into(t.grad_clip_norm)},
                                 {"ema_power", into(t.ema_power)},
                                 {"optimizer", parsed(t.optimizer, parse_optimizer)},
                                 {"trust_coeff", into(t.trust_coeff)},
                                 {"window_stride", into(t.window_stride)},
                                 {"augment", [&](const json& a) {
                                      rd.section(a, "train.augment",
                                                 {{"noise_sigma", into(t.augment.noise_sigma)},
                                                  {"mask_prob", into(t.augment.mask_prob)}});
                                  }}});
                 }},
                {"bc", [&](const json& s) { rd.section(s, "bc", {{"head_dims", into(c.bc_head_dims)}}); }},
                {"eval", [&](const json& s) {
                     rd.section(s, "eval",
                                {{"k_nn", into(c.query.k_nn)},
                                 {"tau_nn", into(c.query.tau_nn)},
                                 {"tau_nn_fixed", into(c.tau_nn_fixed)},
                                 {"horizon", into(c.horizon)},
                                 {"action_horizon", into(c.action_horizon)},
                                 {"episodes", into(c.episodes)},
                                 {"seeds", into(c.eval_seeds)},
                                 {"methods",
                                  [&](const json& v) {
                                      methods = v.get<std::vector<std::string>>();
                                      have_methods = true;
                                  }},
                                 {"eval_every", into(c.eval_every)}});
                 }}});

    if (have_methods) {
        c.methods.clear();
        for (const auto& m : methods) {
            try {
                c.methods.push_back(parse_method(m));
            } catch (const ValidationError& e) {
                errors.push_back(std::string("eval.methods: ") + e.what());
            }
        }
    }
    for (auto& v : c.violations()) errors.push_back(std::move(v));
    if (!errors.empty()) {
        std::string msg = "invalid configuration (" + std::to_string(errors.size()) + " problem" +
                          (errors.size() == 1 ? "" : "s") + "):";
        for (const auto& e : errors) msg += "\n  - " + e;
        throw ValidationError(msg);
    }
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("config file not found: '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ValidationError("config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return config_from_json(doc);
}

std::uint64_t config_hash(const PipelineConfig& cfg) { return fnv1a64(config_to_json(cfg).dump()); }

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace classkit
