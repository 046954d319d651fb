#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "classkit/types.hpp"

namespace classkit {

// One recorded episode. observations, proprio and actions are aligned per timestep.
struct Demonstration {
    std::string id;
    std::vector<Vec> observations;
    std::vector<Vec> proprio;
    std::vector<Vec> actions;
    std::map<std::string, std::string> meta;

    std::size_t length() const { return actions.size(); }
    bool operator==(const Demonstration&) const = default;
};

struct Dataset {
    std::vector<Demonstration> demos;

    std::size_t size() const { return demos.size(); }
    bool empty() const { return demos.empty(); }
    std::size_t total_timesteps() const;
    std::size_t obs_dim() const;
    std::size_t proprio_dim() const;
    std::size_t action_dim() const;

    bool operator==(const Dataset&) const = default;
};

struct WindowIndex {
    std::size_t demo_ord = 0;
    std::size_t t = 0;
    bool operator==(const WindowIndex&) const = default;
};

// T_p consecutive actions starting at index.t, padded with the demo's final action.
struct ActionWindow {
    WindowIndex index;
    std::vector<Vec> actions;
    bool operator==(const ActionWindow&) const = default;
};

// Throws ValidationError naming the demo and field on any invariant violation.
void validate(const Demonstration& demo);
void validate(const Dataset& dataset);

// JSON Lines: one object per demonstration with keys id, obs, proprio, actions, meta.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

// Serializes to the JSON-Lines text exactly as save_dataset writes it.
std::string dump_dataset(const Dataset& dataset);
Dataset parse_dataset(std::string_view text);

ActionWindow action_window(const Dataset& dataset, WindowIndex index, std::size_t horizon);

// Windows start at t = 0, stride, 2*stride, ... for every demo, in demo order.
std::vector<ActionWindow> enumerate_windows(const Dataset& dataset, std::size_t horizon, std::size_t stride = 1);

// Most recent observation and proprioception at the window anchor (single-frame history).
std::pair<const Vec&, const Vec&> observation_at(const Dataset& dataset, WindowIndex index);

}  // namespace classkit
