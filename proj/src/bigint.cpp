// SPDX-License-Identifier: Apache-2.0

#include "moelab/bigint.hpp"

#include <algorithm>

namespace moelab {

BigUint::BigUint(uint64_t v) {
  limbs_ = {static_cast<uint32_t>(v & 0xffffffffull), static_cast<uint32_t>(v >> 32)};
  trim();
}

void BigUint::trim() {
  while (limbs_.size() > 1 && limbs_.back() == 0) limbs_.pop_back();
}

BigUint& BigUint::operator*=(uint64_t m) {
  unsigned __int128 carry = 0;
  for (uint32_t& limb : limbs_) {
    unsigned __int128 cur = static_cast<unsigned __int128>(limb) * m + carry;
    limb = static_cast<uint32_t>(cur & 0xffffffffu);
    carry = cur >> 32;
  }
  while (carry) {
    limbs_.push_back(static_cast<uint32_t>(carry & 0xffffffffu));
    carry >>= 32;
  }
  trim();
  return *this;
}

BigUint& BigUint::divide_exact(uint32_t d) {
  if (d == 0) throw DomainError("BigUint: division by zero");
  uint64_t rem = 0;
  for (auto it = limbs_.rbegin(); it != limbs_.rend(); ++it) {
    uint64_t cur = (rem << 32) | *it;
    *it = static_cast<uint32_t>(cur / d);
    rem = cur % d;
  }
  if (rem != 0) throw DomainError("BigUint: divide_exact left remainder " + std::to_string(rem));
  trim();
  return *this;
}

bool BigUint::fits_u64() const { return limbs_.size() <= 2; }

uint64_t BigUint::as_u64() const {
  if (!fits_u64()) throw DomainError("BigUint: value exceeds 64 bits: " + str());
  uint64_t v = limbs_[0];
  if (limbs_.size() == 2) v |= static_cast<uint64_t>(limbs_[1]) << 32;
  return v;
}

std::string BigUint::str() const {
  std::vector<uint32_t> work = limbs_;
  std::string out;
  auto all_zero = [&] { return std::all_of(work.begin(), work.end(), [](uint32_t l) { return l == 0; }); };
  if (all_zero()) return "0";
  while (!all_zero()) {
    uint64_t rem = 0;
    for (auto it = work.rbegin(); it != work.rend(); ++it) {
      uint64_t cur = (rem << 32) | *it;
      *it = static_cast<uint32_t>(cur / 10);
      rem = cur % 10;
    }
    out.push_back(static_cast<char>('0' + rem));
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::string BigUint::str_grouped() const {
  const std::string plain = str();
  std::string out;
  const size_t n = plain.size();
  for (size_t i = 0; i < n; ++i) {
    if (i > 0 && (n - i) % 3 == 0) out.push_back(',');
    out.push_back(plain[i]);
  }
  return out;
}

BigUint combination_count(int64_t n, int64_t k) {
  if (n < 0 || k < 0) throw DomainError("combination_count: negative argument");
  if (k > n) throw DomainError("combination_count: k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  if (k > n - k) k = n - k;
  BigUint c(1);
  // c = prod_{i=1..k} (n-k+i)/i stays integral at every step.
  for (int64_t i = 1; i <= k; ++i) {
    c *= static_cast<uint64_t>(n - k + i);
    c.divide_exact(static_cast<uint32_t>(i));
  }
  return c;
}

}  // namespace moelab
