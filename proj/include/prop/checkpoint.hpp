#pragma once

#include <string>

#include "prop/modnet.hpp"

namespace prop {

// On-disk policy format: magic + version, a JSON header (key length, layer
// shapes, modulated indices, config hash), then all parameters as
// little-endian 64-bit floats, base layers first, encoders in ascending
// layer index. Round trips are bitwise exact.
struct Checkpoint {
    std::string kind = "prop"; // "prop" (modulated policy) or "baseline" (key-concat net)
    std::string config_hash;
    PropPolicy policy;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace prop
