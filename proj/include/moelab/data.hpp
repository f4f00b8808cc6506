// SPDX-License-Identifier: Apache-2.0
//
// Token streams.  Default: raw bytes, vocab 256.  Optional: whitespace-split
// words mapped through a one-word-per-line vocab file.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace moelab {

struct TokenCorpus {
  std::vector<int> tokens;
  int64_t vocab = 0;

  static TokenCorpus from_bytes(const std::string& path);
  static TokenCorpus from_words(const std::string& path, const std::string& vocab_path);

  // First (1 - eval_fraction) of the stream; training samples only from here.
  std::span<const int> train_split(double eval_fraction) const;
  // Trailing slice held out for evaluation.
  std::span<const int> eval_split(double eval_fraction) const;
};

}  // namespace moelab
