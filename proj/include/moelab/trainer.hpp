// SPDX-License-Identifier: Apache-2.0
//
// Training loop: warmup-then-step-decay learning rate, AdamW with decoupled
// weight decay, global gradient-norm clipping, expert/device balance losses,
// CSV metrics.  Fully deterministic for a given seed, config, and corpus.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "moelab/data.hpp"
#include "moelab/model.hpp"

namespace moelab {

struct TrainConfig {
  double max_lr = 1e-3;
  int64_t warmup_steps = 100;
  int64_t total_steps = 1000;
  std::vector<double> decay_points = {0.8, 0.9};  // fractions of total_steps
  double decay_factor = 0.316;
  int64_t batch_tokens = 0;  // 0 = one sequence per step
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0.1;
  double adam_eps = 1e-8;
  double grad_clip_norm = 1.0;
  uint64_t seed = 0;
  int64_t log_interval = 10;
  double eval_fraction = 0.1;
  // The wall_ms metrics column stays 0 unless enabled: identical runs must
  // produce byte-identical metrics files, and wall time is not deterministic.
  bool record_wall_time = false;
  bool balance_layer_mean = false;  // false: sum balance losses across layers

  void validate() const;
};

// Linear 0 -> max_lr over warmup_steps, then max_lr scaled by decay_factor
// once per decay point passed.  step is 1-based.
double lr_schedule(int64_t step, const TrainConfig& cfg);

class AdamW {
 public:
  AdamW(std::vector<Tensor> params, const TrainConfig& cfg);

  // w -= lr*wd*w + lr*mhat/(sqrt(vhat)+eps).  Grads absent -> treated as zero.
  void step(double lr);
  void zero_grad();
  int64_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_, weight_decay_;
  int64_t t_ = 0;
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the factor applied (1.0 when already within bounds).
double clip_grad_norm(std::span<Tensor> params, double max_norm);

struct MetricsRow {
  int64_t step = 0;
  double lm_loss = 0.0;
  double expbal = 0.0;
  double devbal = 0.0;
  double load_max_mean = 0.0;
  double load_cv = 0.0;
  double lr = 0.0;
  int64_t wall_ms = 0;
};

struct RunMetrics {
  static constexpr const char* kCsvHeader = "step,lm_loss,expbal,devbal,load_max_mean,load_cv,lr,wall_ms";
  std::vector<MetricsRow> rows;

  std::string to_csv() const;
  void write_csv(const std::string& path) const;
};

struct TrainResult {
  RunMetrics metrics;
  double final_lm_loss = 0.0;
  double final_load_cv = 0.0;
  double final_load_max_mean = 0.0;
  int64_t wall_ms = 0;  // real elapsed time, regardless of record_wall_time
};

// Optimizes `params` in place.  Aborts with NumericError on non-finite loss.
TrainResult train(const ModelConfig& cfg, ModelParams& params, const TokenCorpus& corpus,
                  const TrainConfig& tc);

// Mean next-token loss over consecutive windows of the span (no gradients).
double eval_lm_loss(const ModelConfig& cfg, const ModelParams& params, std::span<const int> tokens,
                    int64_t max_tokens, const RouteOverride* ov = nullptr);

// Routing statistics of an evaluation pass, pooled over windows and layers.
BalanceStats eval_balance_stats(const ModelConfig& cfg, const ModelParams& params,
                                std::span<const int> tokens, int64_t max_tokens);

}  // namespace moelab
