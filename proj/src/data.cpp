// SPDX-License-Identifier: Apache-2.0

#include "moelab/data.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "moelab/errors.hpp"

namespace moelab {

TokenCorpus TokenCorpus::from_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("corpus: cannot open '" + path + "'");
  TokenCorpus c;
  c.vocab = 256;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      c.tokens.push_back(static_cast<unsigned char>(buf[i]));
    }
  }
  if (c.tokens.empty()) throw ConfigError("corpus: '" + path + "' is empty");
  return c;
}

TokenCorpus TokenCorpus::from_words(const std::string& path, const std::string& vocab_path) {
  std::ifstream vs(vocab_path);
  if (!vs) throw ConfigError("corpus: cannot open vocab file '" + vocab_path + "'");
  std::unordered_map<std::string, int> ids;
  std::string word;
  while (std::getline(vs, word)) {
    if (word.empty()) continue;
    if (!ids.emplace(word, static_cast<int>(ids.size())).second) {
      throw ConfigError("corpus: duplicate vocab entry '" + word + "'");
    }
  }
  if (ids.empty()) throw ConfigError("corpus: vocab file '" + vocab_path + "' is empty");

  std::ifstream is(path);
  if (!is) throw ConfigError("corpus: cannot open '" + path + "'");
  TokenCorpus c;
  c.vocab = static_cast<int64_t>(ids.size());
  while (is >> word) {
    auto it = ids.find(word);
    if (it == ids.end()) throw ConfigError("corpus: word '" + word + "' missing from vocab");
    c.tokens.push_back(it->second);
  }
  if (c.tokens.empty()) throw ConfigError("corpus: '" + path + "' holds no words");
  return c;
}

namespace {
size_t split_point(size_t n, double eval_fraction) {
  if (eval_fraction < 0.0 || eval_fraction >= 1.0) {
    throw ConfigError("corpus: eval fraction must lie in [0, 1), got " + std::to_string(eval_fraction));
  }
  return n - static_cast<size_t>(static_cast<double>(n) * eval_fraction);
}
}  // namespace

std::span<const int> TokenCorpus::train_split(double eval_fraction) const {
  return {tokens.data(), split_point(tokens.size(), eval_fraction)};
}

std::span<const int> TokenCorpus::eval_split(double eval_fraction) const {
  const size_t cut = split_point(tokens.size(), eval_fraction);
  return {tokens.data() + cut, tokens.size() - cut};
}

}  // namespace moelab
