// SPDX-License-Identifier: Apache-2.0
//
// Just enough unsigned big-integer arithmetic for exact binomial
// coefficients: multiply by a machine word, divide exactly by one.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moelab/errors.hpp"

namespace moelab {

class BigUint {
 public:
  BigUint() : limbs_{0} {}
  explicit BigUint(uint64_t v);

  BigUint& operator*=(uint64_t m);
  // Division that must leave no remainder (used where divisibility is known).
  BigUint& divide_exact(uint32_t d);

  bool operator==(const BigUint& o) const { return limbs_ == o.limbs_; }
  bool operator==(uint64_t v) const { return *this == BigUint(v); }

  bool fits_u64() const;
  uint64_t as_u64() const;  // throws DomainError if it doesn't fit

  std::string str() const;
  // Decimal string with thousands separators: 4426165368 -> "4,426,165,368".
  std::string str_grouped() const;

 private:
  void trim();
  std::vector<uint32_t> limbs_;  // base 2^32, little-endian
};

// C(n, k), exact.  DomainError for n < 0, k < 0 or k > n.
BigUint combination_count(int64_t n, int64_t k);

}  // namespace moelab
