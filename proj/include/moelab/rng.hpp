// SPDX-License-Identifier: Apache-2.0
//
// One master seed, many named substreams.  Every component draws from its own
// substream ("init/tok_emb", "init/layer0/attn", "data", ...), so changing how
// many numbers one component consumes never shifts another component's draws.
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace moelab {

class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed) {
    state_ = splitmix(seed ^ 0x9e3779b97f4a7c15ull);
    if (state_ == 0) state_ = 0x9e3779b97f4a7c15ull;  // xorshift state must be nonzero
  }

  // Derives an independent stream from this stream's identity and a label.
  Rng substream(std::string_view name) const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a over the label
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ull;
    }
    return Rng(splitmix(seed_ ^ h));
  }

  uint64_t stream_id() const { return seed_; }

  uint64_t next_u64() {
    // xorshift64*; hand-rolled so streams are bit-stable across platforms.
    state_ ^= state_ >> 12;
    state_ ^= state_ << 25;
    state_ ^= state_ >> 27;
    return state_ * 0x2545f4914f6cdd1dull;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n); n must be positive.
  uint64_t uniform_int(uint64_t n) {
    uint64_t limit = n * (UINT64_MAX / n);  // rejection sampling, no modulo bias
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Box-Muller; generates pairs, keeps the spare.
  double normal(double mean, double std) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + std * spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + std * r * std::cos(a);
  }

 private:
  static uint64_t splitmix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t seed_;
  uint64_t state_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace moelab
