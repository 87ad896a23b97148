#pragma once

#include <string>

#include "e2d2/model.hpp"

namespace e2d2 {

// Self-describing binary container: magic + version tag, a key=value config
// record, then named parameter tensors as fp64 little-endian blobs.
// save -> load round-trips bitwise.
void save_checkpoint(const Model& model, const std::string& path);
Model load_checkpoint(const std::string& path);

std::string model_config_to_text(const ModelConfig& cfg);
ModelConfig model_config_from_text(const std::string& text);

}  // namespace e2d2
