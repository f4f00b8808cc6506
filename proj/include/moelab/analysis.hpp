// SPDX-License-Identifier: Apache-2.0
//
// Expert-specialization probes over a trained model, an architecture
// ablation matrix, and matmul-FLOP accounting.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moelab/data.hpp"
#include "moelab/model.hpp"
#include "moelab/trainer.hpp"

namespace moelab {

struct ProbePoint {
  double value = 0.0;  // swept quantity (ratio or k)
  double eval_loss = 0.0;
};

struct ProbeReport {
  std::string probe;
  double baseline_loss = 0.0;
  std::vector<ProbePoint> points;

  std::string to_json(const std::string& config_echo) const;
  // Two tab-separated columns with a '#' header line, ready for gnuplot.
  std::string to_plot_data() const;
};

// Mask the floor(ratio * N_r) strongest experts per token, route from the
// rest; swept over `ratios`.  ratio 0 reproduces the baseline exactly.
ProbeReport probe_disable_top(const ModelConfig& cfg, const ModelParams& params,
                              std::span<const int> eval_tokens, int64_t max_tokens,
                              const std::vector<double>& ratios);

// Remove shared experts, widening routing by K_s to keep activation constant.
ProbeReport probe_disable_shared(const ModelConfig& cfg, const ModelParams& params,
                                 std::span<const int> eval_tokens, int64_t max_tokens);

// Route k experts per token instead of K_r, model otherwise unchanged.
ProbeReport probe_vary_activated(const ModelConfig& cfg, const ModelParams& params,
                                 std::span<const int> eval_tokens, int64_t max_tokens,
                                 const std::vector<int64_t>& ks);

// Architecture variants with identical expert-parameter budgets (total and
// activated), trained from the same seed and compared on held-out loss.
struct AblationRow {
  std::string variant;
  int64_t expert_total = 0;
  int64_t expert_activated = 0;
  int64_t total = 0;
  int64_t activated = 0;
  double eval_loss = 0.0;
};

std::vector<std::string> ablation_variant_names();
// Derives the variant's MoE shape from the base model's expert budget.
MoEConfig ablation_variant(const MoEConfig& base, const std::string& name);
std::vector<AblationRow> ablation_matrix(const ModelConfig& base, const TokenCorpus& corpus,
                                         const TrainConfig& tc, const std::vector<std::string>& variants,
                                         int64_t eval_max_tokens);

// 2*m*n*k per matmul, forward plus backward (= 2x forward), activated experts
// only.  Embedding lookups are gathers and count zero.
struct FlopsBreakdown {
  double attention_linear = 0.0;     // q/k/v/o projections
  double attention_quadratic = 0.0;  // scores and context, per-sequence T^2 terms
  double experts = 0.0;              // expert FFNs + router affinities (+ dense FFN layers)
  double head = 0.0;
  double embedding = 0.0;  // always 0; listed to make the accounting explicit
  double total = 0.0;
};
FlopsBreakdown flops_estimate(const ModelConfig& cfg, int64_t tokens);

}  // namespace moelab
