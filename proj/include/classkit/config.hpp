#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "classkit/pipeline.hpp"

namespace classkit {

// Document form of PipelineConfig. Sections: env, collect, mining, encoder, train, bc, eval,
// plus top-level seed and threads. Absent keys keep their defaults.
nlohmann::json config_to_json(const PipelineConfig& cfg);

// Unknown keys and type errors are collected alongside the semantic violations; throws a
// ValidationError listing all of them.
PipelineConfig config_from_json(const nlohmann::json& doc);
PipelineConfig load_config(const std::filesystem::path& path);

// Hash of the canonical document; stamped on every artifact.
std::uint64_t config_hash(const PipelineConfig& cfg);
std::string hex64(std::uint64_t v);

}  // namespace classkit
