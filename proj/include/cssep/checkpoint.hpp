#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cssep/autodiff.hpp"

namespace cssep {

// Versioned binary container: magic, version, config string, training step,
// then named little-endian float32 tensors.
struct Checkpoint {
    std::string config_json;
    long step = 0;
    std::vector<std::pair<std::string, ad::Mat>> tensors;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies tensors into matching named params; throws on missing name or shape
// mismatch.
void restore_params(const Checkpoint& ckpt,
                    const std::vector<std::pair<std::string, ad::Var>>& params);

Checkpoint snapshot_params(const std::string& config_json, long step,
                           const std::vector<std::pair<std::string, ad::Var>>& params);

}  // namespace cssep
