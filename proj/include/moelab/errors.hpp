// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace moelab {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
struct DimensionError : Error { using Error::Error; };

// Out-of-range token ids, expert indices, axes.
struct IndexError : Error { using Error::Error; };

// Non-finite values where finite ones are required.
struct NumericError : Error { using Error::Error; };

// Invalid configuration: bad field values, violated invariants, bad files.
struct ConfigError : Error { using Error::Error; };

// Infeasible routing request (e.g. top-k over fewer than k candidates).
struct RoutingError : Error { using Error::Error; };

// API misuse: calling backward on an unrecorded tensor, grouping that is
// not a partition, and similar contract violations.
struct ContractError : Error { using Error::Error; };

// Mathematical domain violations (negative k, k > n, ...).
struct DomainError : Error { using Error::Error; };

}  // namespace moelab
