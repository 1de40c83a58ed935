#pragma once

#include <string>

#include "brve/model.hpp"

namespace brve {

// Checkpoint container: magic "BRVE1", u16 version, u64 hash of the
// architecture string, then one tensor payload per parameter in canonical
// visit order. Loading validates the hash against the supplied config, so a
// checkpoint never silently attaches to a different architecture.
void save_checkpoint(const std::string& path, BrveModelT<float>& m);
BrveModelT<float> load_checkpoint(const std::string& path, const ModelConfig& cfg);

}  // namespace brve
