// SPDX-License-Identifier: Apache-2.0
//
// Mixture-of-experts layer with fine-grained expert segmentation and shared
// (always-active) experts.
//
// Construction: start from N base experts with a gated FFN of width
// base_ffn_inner, split each into m fine experts of width ~inner/m, activate
// m*K of them per token, and pin K_s of the fine experts as shared.  The
// remaining N_r = m*N - K_s experts are routed: a per-token softmax over
// router centroids scores them and the top K_r = m*K - K_s scores become the
// gates (not renormalized after selection).
//
// Only selected experts are evaluated: tokens are gathered per expert, run
// through that expert's FFN, gate-scaled, and scattered back.  Dense
// evaluate-everything-and-mask code exists solely in test oracles.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "moelab/bigint.hpp"
#include "moelab/rng.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

enum class Activation { kSilu, kGelu };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

struct MoEConfig {
  int64_t hidden = 0;          // token width d
  int64_t base_experts = 0;    // N
  int64_t segmentation = 1;    // m: fine experts per base expert
  int64_t base_topk = 0;       // K: base experts activated per token
  int64_t shared_experts = 0;  // K_s: always-active fine experts
  int64_t base_ffn_inner = 0;  // intermediate width of one standard FFN
  int64_t expert_inner = 0;    // fine-expert width; 0 = derive from size_ratio
  double size_ratio = 0.0;     // fine/standard width ratio; 0 = 1/m
  int64_t device_groups = 1;   // D groups for the device-level balance loss
  double alpha1 = 0.0;         // expert-level balance factor
  double alpha2 = 0.0;         // device-level balance factor
  bool renormalize_gates = false;
  Activation activation = Activation::kSilu;

  int64_t total_fine() const { return segmentation * base_experts; }
  int64_t routed() const { return total_fine() - shared_experts; }             // N_r
  int64_t active_routed() const { return segmentation * base_topk - shared_experts; }  // K_r
  int64_t active_total() const { return segmentation * base_topk; }
  double ratio() const { return size_ratio > 0.0 ? size_ratio : 1.0 / static_cast<double>(segmentation); }
  // Fine-expert intermediate width, aligned up to a multiple of 8.
  int64_t inner() const;

  void validate() const;  // ConfigError naming the violated invariant
};

// One gated FFN: out = (act(u W_gate) .* (u W_in)) W_out.
struct ExpertWeights {
  Tensor w_gate;  // [d x inner]
  Tensor w_in;    // [d x inner]
  Tensor w_out;   // [inner x d]
};

struct Router {
  Tensor centroids;  // [N_r x d]; empty when N_r == 0
};

struct MoEParams {
  std::vector<ExpertWeights> shared;
  std::vector<ExpertWeights> routed;
  Router router;
};

ExpertWeights make_expert(int64_t d, int64_t inner, Rng& rng, double init_std);
MoEParams make_moe_params(const MoEConfig& cfg, Rng rng, double init_std);

struct RoutingDecision {
  Tensor affinities;                          // [T x N_r] softmax scores (tape-connected)
  std::vector<std::vector<int64_t>> selected; // per token, ascending expert indices
  std::vector<std::vector<int64_t>> masked;   // per token, experts barred from selection
  std::vector<double> gates;                  // dense T*N_r snapshot; zero off-selection
  int64_t tokens = 0;
  int64_t n_routed = 0;

  int64_t nonzero_gates() const;
  std::vector<double> selection_counts() const;  // per expert
};

// Probe-time modifications threaded through moe_forward/model_forward.
struct RouteOverride {
  // Bar the floor(ratio * N_r) highest-affinity experts per token before top-k.
  double disable_top_ratio = 0.0;
  // Route this many experts instead of K_r (0 = no change).
  int64_t topk_override = 0;
  // Drop shared experts and widen routing by K_s to keep activation constant.
  bool disable_shared = false;
  // Static per-token barred sets; one entry broadcasts to all tokens.
  std::vector<std::vector<int64_t>> mask;
};

// Softmax over routed-expert logits u e^T; rows are tokens.
Tensor compute_affinities(const Tensor& u, const Router& router);

// Top-k by affinity per token; exact ties go to the lower expert index.
// Masked experts are excluded before selection.
RoutingDecision route_topk(const Tensor& affinities, int64_t k,
                           const std::vector<std::vector<int64_t>>& mask = {});

Tensor expert_ffn(const Tensor& u, const ExpertWeights& w, Activation act);

// Shared-expert sum + gated routed experts + residual.  `residual` defaults
// to u itself; pre-norm callers pass the un-normalized stream.
std::pair<Tensor, RoutingDecision> moe_forward(const Tensor& u, const MoEConfig& cfg,
                                               const MoEParams& params,
                                               const RouteOverride* ov = nullptr,
                                               const Tensor* residual = nullptr);

struct MoEParamCounts {
  int64_t expert_total = 0;      // all fine experts, shared + routed
  int64_t expert_activated = 0;  // shared + K_r routed
  int64_t router = 0;
  int64_t standard_ffn = 0;      // one base-width FFN, for comparisons
};
MoEParamCounts count_params(const MoEConfig& cfg);

// Number of distinct routed-expert combinations a token can receive when
// choosing `active` out of `experts`; exact.
inline BigUint routing_combinations(int64_t experts, int64_t active) {
  return combination_count(experts, active);
}

}  // namespace moelab
