// SPDX-License-Identifier: Apache-2.0

#include "moelab/model.hpp"

#include <cmath>

#include "moelab/errors.hpp"

namespace moelab {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (layers < 0) fail("layers must be non-negative");
  if (hidden <= 0) fail("hidden must be positive");
  if (heads <= 0 || head_dim <= 0) fail("heads and head_dim must be positive");
  if (vocab < 2) fail("vocab must be at least 2");
  if (seq_len < 1) fail("seq_len must be positive");
  if (!(init_std > 0.0)) fail("init_std must be positive");
  if (layers > 0) {
    if (moe.hidden != hidden) {
      fail("moe.hidden " + std::to_string(moe.hidden) + " != model hidden " + std::to_string(hidden));
    }
    moe.validate();
    if (first_layer_dense && moe.base_ffn_inner <= 0) {
      fail("first_layer_dense requires base_ffn_inner");
    }
  }
}

namespace {

MoEConfig validation_moe(int64_t d) {
  MoEConfig m;
  m.hidden = d;
  m.base_experts = 16;
  m.segmentation = 4;
  m.base_topk = 2;
  m.shared_experts = 1;
  m.base_ffn_inner = 3424;  // keeps fine experts at exactly a quarter width
  m.alpha1 = 0.01;
  return m;
}

}  // namespace

ModelConfig preset(const std::string& name) {
  ModelConfig c;
  if (name == "validation-2B") {
    c.layers = 9;
    c.hidden = 1280;
    c.heads = 10;
    c.head_dim = 128;
    c.vocab = 8192;
    c.seq_len = 2048;
    c.moe = validation_moe(c.hidden);
  } else if (name == "moe-16B") {
    c.layers = 28;
    c.hidden = 2048;
    c.heads = 16;
    c.head_dim = 128;
    c.vocab = 100000;
    c.seq_len = 4096;
    c.first_layer_dense = true;
    MoEConfig& m = c.moe;
    m.hidden = c.hidden;
    // 2 shared + 64 routed quarter-width experts, 8 active per token.
    m.base_experts = 66;
    m.segmentation = 1;
    m.base_topk = 8;
    m.shared_experts = 2;
    m.base_ffn_inner = 5464;
    m.size_ratio = 0.25;
    m.alpha1 = 0.001;
  } else if (name == "moe-145B") {
    c.layers = 62;
    c.hidden = 4096;
    c.heads = 32;
    c.head_dim = 128;
    c.vocab = 100000;
    c.seq_len = 4096;
    c.first_layer_dense = true;
    MoEConfig& m = c.moe;
    m.hidden = c.hidden;
    // 4 shared + 128 routed eighth-width experts, 16 active per token,
    // routed experts spread over 4 device groups.
    m.base_experts = 132;
    m.segmentation = 1;
    m.base_topk = 16;
    m.shared_experts = 4;
    m.base_ffn_inner = 10928;
    m.size_ratio = 0.125;
    m.device_groups = 4;
    m.alpha1 = 0.003;
    m.alpha2 = 0.05;
  } else if (name == "desk") {
    c.layers = 2;
    c.hidden = 64;
    c.heads = 4;
    c.head_dim = 16;
    c.vocab = 256;
    c.seq_len = 64;
    MoEConfig& m = c.moe;
    m.hidden = c.hidden;
    m.base_experts = 4;
    m.segmentation = 4;
    m.base_topk = 1;
    m.shared_experts = 1;
    m.base_ffn_inner = 128;
    m.alpha1 = 0.01;
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  c.validate();
  return c;
}

std::vector<std::string> preset_names() { return {"validation-2B", "moe-16B", "moe-145B", "desk"}; }

int64_t ModelParams::count() const {
  int64_t n = 0;
  auto add = [&n](const Tensor& t) { n += t.defined() ? t.numel() : 0; };
  add(tok_embedding);
  add(pos_embedding);
  for (const LayerParams& l : layers) {
    add(l.ln1_gain);
    add(l.ln1_bias);
    add(l.ln2_gain);
    add(l.ln2_bias);
    for (const AttentionHead& h : l.heads) {
      add(h.wq);
      add(h.wk);
      add(h.wv);
      add(h.wo);
    }
    if (l.dense_ffn) {
      add(l.dense_ffn->w_gate);
      add(l.dense_ffn->w_in);
      add(l.dense_ffn->w_out);
    }
    if (l.moe) {
      for (const ExpertWeights& e : l.moe->shared) {
        add(e.w_gate);
        add(e.w_in);
        add(e.w_out);
      }
      for (const ExpertWeights& e : l.moe->routed) {
        add(e.w_gate);
        add(e.w_in);
        add(e.w_out);
      }
      add(l.moe->router.centroids);
    }
  }
  add(final_gain);
  add(final_bias);
  add(lm_head);
  return n;
}

namespace {

ExpertWeights zero_expert(int64_t d, int64_t inner) {
  ExpertWeights w;
  w.w_gate = Tensor::zeros({d, inner}, true);
  w.w_in = Tensor::zeros({d, inner}, true);
  w.w_out = Tensor::zeros({inner, d}, true);
  return w;
}

bool layer_is_dense(const ModelConfig& cfg, int64_t layer) {
  return cfg.first_layer_dense && layer == 0;
}

}  // namespace

ModelParams make_params(const ModelConfig& cfg) {
  cfg.validate();
  const int64_t d = cfg.hidden;
  ModelParams p;
  p.tok_embedding = Tensor::zeros({cfg.vocab, d}, true);
  p.pos_embedding = Tensor::zeros({cfg.seq_len, d}, true);
  for (int64_t i = 0; i < cfg.layers; ++i) {
    LayerParams l;
    l.ln1_gain = Tensor::full({d}, 1.0, true);
    l.ln1_bias = Tensor::zeros({d}, true);
    l.ln2_gain = Tensor::full({d}, 1.0, true);
    l.ln2_bias = Tensor::zeros({d}, true);
    for (int64_t h = 0; h < cfg.heads; ++h) {
      AttentionHead head;
      head.wq = Tensor::zeros({d, cfg.head_dim}, true);
      head.wk = Tensor::zeros({d, cfg.head_dim}, true);
      head.wv = Tensor::zeros({d, cfg.head_dim}, true);
      head.wo = Tensor::zeros({cfg.head_dim, d}, true);
      l.heads.push_back(std::move(head));
    }
    if (layer_is_dense(cfg, i)) {
      l.dense_ffn = zero_expert(d, cfg.moe.base_ffn_inner);
    } else {
      MoEParams moe;
      const int64_t inner = cfg.moe.inner();
      for (int64_t e = 0; e < cfg.moe.shared_experts; ++e) moe.shared.push_back(zero_expert(d, inner));
      for (int64_t e = 0; e < cfg.moe.routed(); ++e) moe.routed.push_back(zero_expert(d, inner));
      if (cfg.moe.routed() > 0) moe.router.centroids = Tensor::zeros({cfg.moe.routed(), d}, true);
      l.moe = std::move(moe);
    }
    p.layers.push_back(std::move(l));
  }
  p.final_gain = Tensor::full({d}, 1.0, true);
  p.final_bias = Tensor::zeros({d}, true);
  if (!cfg.tie_embeddings) p.lm_head = Tensor::zeros({d, cfg.vocab}, true);
  return p;
}

ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelParams p = make_params(cfg);
  const Rng master(seed);
  const double std = cfg.init_std;

  auto fill = [&](Tensor& t, Rng& rng) {
    for (double& v : t.data()) v = rng.normal(0.0, std);
  };

  {
    Rng r = master.substream("init/tok_emb");
    fill(p.tok_embedding, r);
  }
  {
    Rng r = master.substream("init/pos_emb");
    fill(p.pos_embedding, r);
  }
  for (int64_t i = 0; i < cfg.layers; ++i) {
    LayerParams& l = p.layers[i];
    {
      Rng r = master.substream("init/layer" + std::to_string(i) + "/attn");
      for (AttentionHead& h : l.heads) {
        fill(h.wq, r);
        fill(h.wk, r);
        fill(h.wv, r);
        fill(h.wo, r);
      }
    }
    Rng r = master.substream("init/layer" + std::to_string(i) + "/ffn");
    if (l.dense_ffn) {
      fill(l.dense_ffn->w_gate, r);
      fill(l.dense_ffn->w_in, r);
      fill(l.dense_ffn->w_out, r);
    } else if (l.moe) {
      for (ExpertWeights& e : l.moe->shared) {
        fill(e.w_gate, r);
        fill(e.w_in, r);
        fill(e.w_out, r);
      }
      for (ExpertWeights& e : l.moe->routed) {
        fill(e.w_gate, r);
        fill(e.w_in, r);
        fill(e.w_out, r);
      }
      if (l.moe->router.centroids.defined()) fill(l.moe->router.centroids, r);
    }
  }
  if (p.lm_head.defined()) {
    Rng r = master.substream("init/head");
    fill(p.lm_head, r);
  }
  return p;
}

void visit_params(const ModelConfig& cfg, ModelParams& params,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("tok_embedding", params.tok_embedding);
  fn("pos_embedding", params.pos_embedding);
  for (size_t i = 0; i < params.layers.size(); ++i) {
    const std::string lp = "layer" + std::to_string(i) + ".";
    LayerParams& l = params.layers[i];
    fn(lp + "ln1.gain", l.ln1_gain);
    fn(lp + "ln1.bias", l.ln1_bias);
    for (size_t h = 0; h < l.heads.size(); ++h) {
      const std::string hp = lp + "attn.head" + std::to_string(h) + ".";
      fn(hp + "wq", l.heads[h].wq);
      fn(hp + "wk", l.heads[h].wk);
      fn(hp + "wv", l.heads[h].wv);
      fn(hp + "wo", l.heads[h].wo);
    }
    fn(lp + "ln2.gain", l.ln2_gain);
    fn(lp + "ln2.bias", l.ln2_bias);
    if (l.dense_ffn) {
      fn(lp + "ffn.w_gate", l.dense_ffn->w_gate);
      fn(lp + "ffn.w_in", l.dense_ffn->w_in);
      fn(lp + "ffn.w_out", l.dense_ffn->w_out);
    }
    if (l.moe) {
      for (size_t e = 0; e < l.moe->shared.size(); ++e) {
        const std::string ep = lp + "moe.shared" + std::to_string(e) + ".";
        fn(ep + "w_gate", l.moe->shared[e].w_gate);
        fn(ep + "w_in", l.moe->shared[e].w_in);
        fn(ep + "w_out", l.moe->shared[e].w_out);
      }
      for (size_t e = 0; e < l.moe->routed.size(); ++e) {
        const std::string ep = lp + "moe.routed" + std::to_string(e) + ".";
        fn(ep + "w_gate", l.moe->routed[e].w_gate);
        fn(ep + "w_in", l.moe->routed[e].w_in);
        fn(ep + "w_out", l.moe->routed[e].w_out);
      }
      if (l.moe->router.centroids.defined()) fn(lp + "moe.router", l.moe->router.centroids);
    }
  }
  fn("final_ln.gain", params.final_gain);
  fn("final_ln.bias", params.final_bias);
  if (params.lm_head.defined()) fn("lm_head", params.lm_head);
  (void)cfg;
}

std::vector<Tensor> collect_params(const ModelConfig& cfg, ModelParams& params) {
  std::vector<Tensor> out;
  visit_params(cfg, params, [&out](const std::string&, Tensor& t) { out.push_back(t); });
  return out;
}

namespace {

// Additive causal mask: 0 on and below the diagonal, a large negative number
// above it.  exp() of the masked scores underflows to exactly zero, so future
// positions contribute nothing, bit for bit.
Tensor causal_mask(int64_t t_count) {
  Tensor m = Tensor::zeros({t_count, t_count});
  auto d = m.data();
  for (int64_t i = 0; i < t_count; ++i)
    for (int64_t j = i + 1; j < t_count; ++j) d[i * t_count + j] = -1e30;
  return m;
}

}  // namespace

Tensor attention_block(const Tensor& u, const LayerParams& layer, const ModelConfig& cfg) {
  const int64_t t_count = u.shape()[0];
  Tensor x = layer_norm(u, layer.ln1_gain, layer.ln1_bias);
  Tensor mask = causal_mask(t_count);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));

  Tensor out = u;  // residual
  for (const AttentionHead& h : layer.heads) {
    Tensor q = matmul(x, h.wq);
    Tensor k = matmul(x, h.wk);
    Tensor v = matmul(x, h.wv);
    Tensor scores = add(scale(matmul(q, transpose(k)), inv_sqrt), mask);
    Tensor att = softmax(scores, 1);
    out = add(out, matmul(matmul(att, v), h.wo));
  }
  return out;
}

ForwardResult model_forward(const std::vector<int>& tokens, const ModelConfig& cfg,
                            const ModelParams& params, const RouteOverride* ov) {
  cfg.validate();
  const int64_t t_count = static_cast<int64_t>(tokens.size());
  if (t_count < 1) throw DimensionError("model_forward: empty token sequence");
  if (t_count > cfg.seq_len) {
    throw DimensionError("model_forward: sequence of " + std::to_string(t_count) +
                         " exceeds seq_len " + std::to_string(cfg.seq_len));
  }

  std::vector<int> positions(t_count);
  for (int64_t i = 0; i < t_count; ++i) positions[i] = static_cast<int>(i);

  Tensor h = add(embedding_lookup(params.tok_embedding, tokens),
                 embedding_lookup(params.pos_embedding, positions));

  ForwardResult result;
  for (size_t i = 0; i < params.layers.size(); ++i) {
    const LayerParams& l = params.layers[i];
    h = attention_block(h, l, cfg);
    Tensor x = layer_norm(h, l.ln2_gain, l.ln2_bias);
    if (l.dense_ffn) {
      h = add(h, expert_ffn(x, *l.dense_ffn, cfg.moe.activation));
    } else if (l.moe) {
      auto [y, dec] = moe_forward(x, cfg.moe, *l.moe, ov, &h);
      h = y;
      result.decisions.push_back(std::move(dec));
    }
  }
  h = layer_norm(h, params.final_gain, params.final_bias);
  result.logits = params.lm_head.defined() ? matmul(h, params.lm_head)
                                           : matmul(h, transpose(params.tok_embedding));
  return result;
}

ModelParamCounts count_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParamCounts c;
  const int64_t d = cfg.hidden;
  c.embedding = cfg.vocab * d + cfg.seq_len * d;
  c.head = cfg.tie_embeddings ? 0 : d * cfg.vocab;

  const MoEParamCounts per_layer = cfg.layers > 0 ? count_params(cfg.moe) : MoEParamCounts{};
  for (int64_t i = 0; i < cfg.layers; ++i) {
    c.attention += cfg.heads * 4 * d * cfg.head_dim;
    c.layer_norm += 4 * d;
    if (layer_is_dense(cfg, i)) {
      c.dense_ffn += 3 * d * cfg.moe.base_ffn_inner;
    } else {
      c.expert_total += per_layer.expert_total;
      c.expert_activated += per_layer.expert_activated;
      c.router += per_layer.router;
    }
  }
  c.layer_norm += 2 * d;  // final norm

  c.total = c.embedding + c.attention + c.layer_norm + c.router + c.expert_total + c.dense_ffn + c.head;
  c.activated = c.attention + c.layer_norm + c.router + c.expert_activated + c.dense_ffn + c.head;
  return c;
}

}  // namespace moelab
