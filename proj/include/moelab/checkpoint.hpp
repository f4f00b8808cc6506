// SPDX-License-Identifier: Apache-2.0
//
// Single-file checkpoint: versioned header, embedded run-config JSON, then
// named float64 arrays with shapes.  Everything little-endian.
#pragma once

#include <string>

#include "moelab/model.hpp"

namespace moelab {

inline constexpr char kCheckpointMagic[8] = {'M', 'O', 'E', 'L', 'A', 'B', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

// config_json is stored verbatim; it is expected to parse as a run config.
void save_checkpoint(const std::string& path, const std::string& config_json,
                     const ModelConfig& cfg, ModelParams& params);

struct LoadedCheckpoint {
  std::string config_json;
  ModelConfig config;
  ModelParams params;
};

// `rebuild` turns the embedded JSON into a ModelConfig (the CLI supplies the
// run-config parser; tests may pass their own).
LoadedCheckpoint load_checkpoint(const std::string& path,
                                 const std::function<ModelConfig(const std::string&)>& rebuild);

}  // namespace moelab
