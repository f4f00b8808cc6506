// SPDX-License-Identifier: Apache-2.0
//
// Decoder-only language model: learned absolute positions, pre-norm causal
// multi-head attention, and an MoE sublayer per block (optionally a dense FFN
// in the first block).  Embedding and output head are untied by default.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "moelab/balance.hpp"
#include "moelab/moe.hpp"
#include "moelab/tensor.hpp"

namespace moelab {

struct ModelConfig {
  int64_t layers = 0;
  int64_t hidden = 0;
  int64_t heads = 0;
  int64_t head_dim = 0;
  int64_t vocab = 0;
  int64_t seq_len = 0;
  MoEConfig moe;
  bool first_layer_dense = false;
  bool tie_embeddings = false;
  double init_std = 0.006;

  void validate() const;
};

// Named configurations: "validation-2B", "moe-16B", "moe-145B", "desk".
ModelConfig preset(const std::string& name);
std::vector<std::string> preset_names();

struct AttentionHead {
  Tensor wq, wk, wv;  // [d x head_dim]
  Tensor wo;          // [head_dim x d]
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;  // attention sublayer norm
  Tensor ln2_gain, ln2_bias;  // FFN/MoE sublayer norm
  std::vector<AttentionHead> heads;
  std::optional<ExpertWeights> dense_ffn;  // first-layer-dense blocks
  std::optional<MoEParams> moe;
};

struct ModelParams {
  Tensor tok_embedding;  // [vocab x d]
  Tensor pos_embedding;  // [seq_len x d]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor lm_head;  // [d x vocab]; undefined when embeddings are tied

  int64_t count() const;
};

// Zero parameters with the right shapes (checkpoint loading, tests).
ModelParams make_params(const ModelConfig& cfg);
// Random init: every weight matrix ~ Normal(0, init_std); norms start at
// identity.  Each component draws from its own substream of `seed`, so e.g.
// attention init is bit-identical across MoE-shape variants.
ModelParams init_params(const ModelConfig& cfg, uint64_t seed);

// Stable name -> tensor walk; order is fixed and is the checkpoint layout.
void visit_params(const ModelConfig& cfg, ModelParams& params,
                  const std::function<void(const std::string&, Tensor&)>& fn);
std::vector<Tensor> collect_params(const ModelConfig& cfg, ModelParams& params);

// Pre-norm causal self-attention plus residual.
Tensor attention_block(const Tensor& u, const LayerParams& layer, const ModelConfig& cfg);

struct ForwardResult {
  Tensor logits;  // [T x vocab]
  std::vector<RoutingDecision> decisions;  // one per MoE layer, in depth order
};

ForwardResult model_forward(const std::vector<int>& tokens, const ModelConfig& cfg,
                            const ModelParams& params, const RouteOverride* ov = nullptr);

struct ModelParamCounts {
  int64_t embedding = 0;   // token + position tables
  int64_t attention = 0;
  int64_t layer_norm = 0;
  int64_t router = 0;
  int64_t expert_total = 0;
  int64_t expert_activated = 0;
  int64_t dense_ffn = 0;
  int64_t head = 0;
  int64_t total = 0;
  // Parameters touched per token.  Embedding tables are excluded (a lookup
  // touches one row and costs no matmul FLOPs); the head is included.
  int64_t activated = 0;
};
ModelParamCounts count_params(const ModelConfig& cfg);

}  // namespace moelab
