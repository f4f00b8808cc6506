// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document describing the model, training
// schedule, data files, and probe options.  Parsing is strict -- a
// schema_version field is required, unknown keys are rejected with their
// dotted path, and syntax errors are reported with a line number.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moelab/model.hpp"
#include "moelab/trainer.hpp"

namespace moelab {

inline constexpr int64_t kConfigSchemaVersion = 1;

struct ProbeOptions {
  std::vector<double> ratios = {0.0, 0.25, 0.5};  // disable-top sweep
  std::vector<int64_t> k_values = {1, 2, 3};      // vary-activated sweep
  std::vector<std::string> variants;              // ablation subset; empty = all
  int64_t eval_tokens = 4096;
  int64_t ablate_steps = 60;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string corpus;      // token source; bytes unless vocab_file is set
  std::string vocab_file;  // whitespace-word vocabulary, one word per line
  std::string out;         // default output directory
  ProbeOptions probes;

  void validate() const;

  // Canonical JSON text with every field explicit; parses back to an equal
  // config.  This is what checkpoints and summaries embed.
  std::string echo() const;

  // `origin` prefixes error messages (usually the file path).
  static RunConfig from_json_text(const std::string& text,
                                  const std::string& origin = "<config>");
  static RunConfig from_file(const std::string& path);
};

}  // namespace moelab
