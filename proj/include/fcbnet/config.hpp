#pragma once

#include <cstdint>
#include <string>

#include "fcbnet/model.hpp"
#include "fcbnet/training.hpp"

namespace fcbnet {

// Everything a run needs: architecture, optimization, and data locations.
struct RunConfig {
    FcbNetConfig model;
    TrainConfig train;
    std::string manifest;
    std::string out_dir = "runs";
};

// Strict parsing: unknown keys are rejected, every field defaulted.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_json(const RunConfig& config);

// Canonical serialization of the architecture alone; checkpoints embed
// its FNV-1a hash and refuse to load into a different architecture.
std::string canonical_model_json(const FcbNetConfig& config);
uint64_t model_fingerprint(const FcbNetConfig& config);

}  // namespace fcbnet
