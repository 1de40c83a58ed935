#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "brve/model.hpp"

namespace brve {

// key=value text form covering every ModelConfig field; '#' starts a comment.
std::string serialize_config(const ModelConfig& cfg);
ModelConfig parse_config(const std::string& text);
ModelConfig load_config_file(const std::string& path);

// Canonical string of the architecture-defining fields only. Runtime fields
// (temporal stride) are excluded so one checkpoint serves any stride.
std::string architecture_string(const ModelConfig& cfg);

std::uint64_t fnv1a64(std::string_view s);

}  // namespace brve
