// SPDX-License-Identifier: Apache-2.0
//
// Load-balance regularizers over routing decisions.
//
// For routed expert i over T tokens with K' selections per token:
//   f_i = N' / (K' T) * (# tokens selecting i)      -- sums to N'
//   P_i = mean over tokens of the softmax affinity s_{t,i}
// Expert-level loss: alpha1 * sum_i f_i P_i; a perfectly uniform batch scores
// exactly alpha1.  The device-level variant groups routed experts into D
// disjoint groups, averages f and sums P within each group, and scores
// alpha2 * sum_i f'_i P'_i.
//
// Selection counts are constants: gradients flow only through the P terms
// (and through the gate-weighted expert outputs elsewhere).
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "moelab/moe.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

struct BalanceStats {
  int64_t tokens = 0;    // T
  int64_t n_routed = 0;  // N'
  int64_t k_active = 0;  // K' (selections per token)
  std::vector<double> counts;  // per-expert selection counts
  std::vector<double> f;       // scaled selection fractions
  std::vector<double> p;       // mean affinities (plain values)
  Tensor p_row;                // [1 x N'] tape-connected mean affinities; may be undefined
};

// Stats for one decision.  k_active is taken from the actual selections.
BalanceStats balance_stats(const RoutingDecision& dec);

// Pools several equally-sized decisions (e.g. the sequences of one batch)
// into a single token population.
BalanceStats pooled_balance_stats(std::span<const RoutingDecision> decs);

// alpha1 * sum_i f_i P_i as a tape scalar (constant tensor if stats carry no tape).
Tensor expert_balance_loss(const BalanceStats& stats, double alpha1);

struct DeviceGrouping {
  std::vector<std::vector<int64_t>> groups;

  // Experts 0..n-1 split into d contiguous equal runs.
  static DeviceGrouping contiguous(int64_t n_routed, int64_t d);
  // ContractError unless groups form a partition of 0..n_routed-1.
  void validate(int64_t n_routed) const;
};

Tensor device_balance_loss(const BalanceStats& stats, const DeviceGrouping& grouping, double alpha2);

struct LoadDispersion {
  double max_over_mean = 0.0;
  double cv = 0.0;  // population stddev / mean of f
};
LoadDispersion load_dispersion(const BalanceStats& stats);

}  // namespace moelab
