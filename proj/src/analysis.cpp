// SPDX-License-Identifier: Apache-2.0

#include "moelab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "moelab/errors.hpp"

#include <json.hpp>

namespace moelab {

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

}  // namespace

std::string ProbeReport::to_json(const std::string& config_echo) const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["probe"] = probe;
  j["baseline_loss"] = baseline_loss;
  j["points"] = nlohmann::json::array();
  for (const ProbePoint& p : points) {
    j["points"].push_back({{"value", p.value}, {"eval_loss", p.eval_loss}});
  }
  if (!config_echo.empty()) {
    j["config"] = nlohmann::json::parse(config_echo, nullptr, /*allow_exceptions=*/false);
  }
  return j.dump(2) + "\n";
}

std::string ProbeReport::to_plot_data() const {
  std::string out = "# " + probe + "\t eval_loss (baseline " + fmt_double(baseline_loss) + ")\n";
  for (const ProbePoint& p : points) {
    out += fmt_double(p.value);
    out.push_back('\t');
    out += fmt_double(p.eval_loss);
    out.push_back('\n');
  }
  return out;
}

ProbeReport probe_disable_top(const ModelConfig& cfg, const ModelParams& params,
                              std::span<const int> eval_tokens, int64_t max_tokens,
                              const std::vector<double>& ratios) {
  for (double r : ratios) {
    if (r < 0.0 || r >= 1.0) throw DomainError("disable_top: ratio must lie in [0, 1), got " + fmt_double(r));
  }
  ProbeReport rep;
  rep.probe = "disable_top_routed";
  rep.baseline_loss = eval_lm_loss(cfg, params, eval_tokens, max_tokens);
  for (double r : ratios) {
    RouteOverride ov;
    ov.disable_top_ratio = r;
    rep.points.push_back({r, eval_lm_loss(cfg, params, eval_tokens, max_tokens, &ov)});
  }
  return rep;
}

ProbeReport probe_disable_shared(const ModelConfig& cfg, const ModelParams& params,
                                 std::span<const int> eval_tokens, int64_t max_tokens) {
  if (cfg.moe.shared_experts < 1) {
    throw ContractError("disable_shared: model has no shared experts");
  }
  ProbeReport rep;
  rep.probe = "disable_shared";
  rep.baseline_loss = eval_lm_loss(cfg, params, eval_tokens, max_tokens);
  RouteOverride ov;
  ov.disable_shared = true;
  rep.points.push_back({1.0, eval_lm_loss(cfg, params, eval_tokens, max_tokens, &ov)});
  return rep;
}

ProbeReport probe_vary_activated(const ModelConfig& cfg, const ModelParams& params,
                                 std::span<const int> eval_tokens, int64_t max_tokens,
                                 const std::vector<int64_t>& ks) {
  for (int64_t k : ks) {
    if (k < 1) throw DomainError("vary_activated: k must be positive");
    if (k > cfg.moe.routed()) {
      throw RoutingError("vary_activated: k=" + std::to_string(k) + " exceeds N_r=" +
                         std::to_string(cfg.moe.routed()));
    }
  }
  ProbeReport rep;
  rep.probe = "vary_activated";
  rep.baseline_loss = eval_lm_loss(cfg, params, eval_tokens, max_tokens);
  for (int64_t k : ks) {
    RouteOverride ov;
    ov.topk_override = k;
    rep.points.push_back({static_cast<double>(k), eval_lm_loss(cfg, params, eval_tokens, max_tokens, &ov)});
  }
  return rep;
}

std::vector<std::string> ablation_variant_names() {
  return {"gshard-top2",     "shared-isolation", "x2-segmentation", "x4-segmentation",
          "ratio-1-shared",  "ratio-2-shared",   "ratio-4-shared"};
}

MoEConfig ablation_variant(const MoEConfig& base, const std::string& name) {
  // The family keeps N base experts and K=2 activated; variants re-slice them.
  MoEConfig v = base;
  v.base_topk = 2;
  v.expert_inner = 0;
  v.size_ratio = 0.0;
  if (name == "gshard-top2") {
    v.segmentation = 1;
    v.shared_experts = 0;
  } else if (name == "shared-isolation") {
    v.segmentation = 1;
    v.shared_experts = 1;
  } else if (name == "x2-segmentation") {
    v.segmentation = 2;
    v.shared_experts = 1;
  } else if (name == "x4-segmentation" || name == "ratio-1-shared") {
    v.segmentation = 4;
    v.shared_experts = 1;
  } else if (name == "ratio-2-shared") {
    v.segmentation = 4;
    v.shared_experts = 2;
  } else if (name == "ratio-4-shared") {
    v.segmentation = 4;
    v.shared_experts = 4;
  } else {
    throw ConfigError("unknown ablation variant '" + name + "'");
  }
  v.validate();
  return v;
}

std::vector<AblationRow> ablation_matrix(const ModelConfig& base, const TokenCorpus& corpus,
                                         const TrainConfig& tc, const std::vector<std::string>& variants_in,
                                         int64_t eval_max_tokens) {
  const std::vector<std::string> variants =
      variants_in.empty() ? ablation_variant_names() : variants_in;

  // Equal budgets are a precondition, checked before any training starts.
  std::vector<ModelConfig> cfgs;
  for (const std::string& name : variants) {
    ModelConfig cfg = base;
    cfg.moe = ablation_variant(base.moe, name);
    cfg.validate();
    const ModelParamCounts c = count_params(cfg);
    if (!cfgs.empty()) {
      const ModelParamCounts ref = count_params(cfgs.front());
      if (c.expert_total != ref.expert_total || c.expert_activated != ref.expert_activated) {
        throw ConfigError("ablation: variant '" + name + "' breaks the expert budget: " +
                          std::to_string(c.expert_total) + "/" + std::to_string(c.expert_activated) +
                          " vs " + std::to_string(ref.expert_total) + "/" +
                          std::to_string(ref.expert_activated));
      }
    }
    cfgs.push_back(std::move(cfg));
  }

  std::vector<AblationRow> rows;
  for (size_t i = 0; i < variants.size(); ++i) {
    const ModelConfig& cfg = cfgs[i];
    ModelParams params = init_params(cfg, tc.seed);
    TrainResult tr [[maybe_unused]] = train(cfg, params, corpus, tc);
    const double loss =
        eval_lm_loss(cfg, params, corpus.eval_split(tc.eval_fraction), eval_max_tokens);
    const ModelParamCounts c = count_params(cfg);
    rows.push_back({variants[i], c.expert_total, c.expert_activated, c.total, c.activated, loss});
  }
  return rows;
}

FlopsBreakdown flops_estimate(const ModelConfig& cfg, int64_t tokens) {
  cfg.validate();
  if (tokens < 1) throw DomainError("flops_estimate: tokens must be positive");

  FlopsBreakdown f;
  const double d = static_cast<double>(cfg.hidden);
  const double hd = static_cast<double>(cfg.head_dim);
  const double heads = static_cast<double>(cfg.heads);
  const double vocab = static_cast<double>(cfg.vocab);

  int64_t moe_layers = 0, dense_layers = 0;
  for (int64_t i = 0; i < cfg.layers; ++i) {
    if (cfg.first_layer_dense && i == 0) {
      ++dense_layers;
    } else {
      ++moe_layers;
    }
  }

  const double fine_inner = static_cast<double>(cfg.moe.inner());
  const double active_experts = static_cast<double>(cfg.moe.active_total());
  const double n_routed = static_cast<double>(cfg.moe.routed());
  const double layers = static_cast<double>(cfg.layers);

  // tokens split into full seq_len windows plus one remainder window; the
  // linear terms depend only on the token total, the score/context terms on
  // the per-window length squared.
  const double t_total = static_cast<double>(tokens);
  const double full = static_cast<double>(tokens / cfg.seq_len);
  const double tail = static_cast<double>(tokens % cfg.seq_len);
  const double win = static_cast<double>(cfg.seq_len);

  f.attention_linear = layers * heads * 4.0 * 2.0 * t_total * d * hd;
  f.attention_quadratic = layers * heads * 2.0 * 2.0 * hd * (full * win * win + tail * tail);
  f.experts = static_cast<double>(moe_layers) *
              (t_total * active_experts * 3.0 * 2.0 * d * fine_inner + 2.0 * t_total * d * n_routed);
  f.experts += static_cast<double>(dense_layers) * t_total * 3.0 * 2.0 * d *
               static_cast<double>(cfg.moe.base_ffn_inner);
  f.head = 2.0 * t_total * d * vocab;

  const double forward =
      f.attention_linear + f.attention_quadratic + f.experts + f.head + f.embedding;
  // One backward costs two forwards.
  f.attention_linear *= 3.0;
  f.attention_quadratic *= 3.0;
  f.experts *= 3.0;
  f.head *= 3.0;
  f.total = forward * 3.0;
  return f;
}

}  // namespace moelab
