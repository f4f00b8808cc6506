// SPDX-License-Identifier: Apache-2.0

#include "moelab/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "moelab/errors.hpp"

namespace moelab {

Activation activation_from_string(const std::string& name) {
  if (name == "silu") return Activation::kSilu;
  if (name == "gelu") return Activation::kGelu;
  throw ConfigError("unknown activation '" + name + "' (expected silu or gelu)");
}

std::string to_string(Activation a) { return a == Activation::kSilu ? "silu" : "gelu"; }

int64_t MoEConfig::inner() const {
  if (expert_inner > 0) return expert_inner;
  const double w = static_cast<double>(base_ffn_inner) * ratio();
  int64_t v = static_cast<int64_t>(std::ceil(w));
  return (v + 7) / 8 * 8;
}

void MoEConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("moe config: " + msg); };
  if (hidden <= 0) fail("hidden must be positive, got " + std::to_string(hidden));
  if (base_experts <= 0) fail("base_experts must be positive, got " + std::to_string(base_experts));
  if (segmentation <= 0) fail("segmentation must be positive, got " + std::to_string(segmentation));
  if (base_topk <= 0) fail("base_topk must be positive, got " + std::to_string(base_topk));
  if (shared_experts < 0) fail("shared_experts must be non-negative");
  if (base_topk > base_experts) {
    fail("base_topk <= base_experts violated: K=" + std::to_string(base_topk) +
         " N=" + std::to_string(base_experts));
  }
  if (active_total() < shared_experts) {
    fail("m*K >= K_s violated: m=" + std::to_string(segmentation) + " K=" + std::to_string(base_topk) +
         " K_s=" + std::to_string(shared_experts));
  }
  if (routed() < active_routed()) {
    fail("N_r >= K_r violated: N_r=" + std::to_string(routed()) + " K_r=" + std::to_string(active_routed()));
  }
  if (base_ffn_inner <= 0 && expert_inner <= 0) fail("one of base_ffn_inner / expert_inner must be set");
  if (size_ratio < 0.0 || size_ratio > 1.0) fail("size_ratio must lie in (0, 1], got " + std::to_string(size_ratio));
  if (device_groups < 1) fail("device_groups must be >= 1");
  if (device_groups > 1 && routed() % device_groups != 0) {
    fail("device_groups must divide N_r: D=" + std::to_string(device_groups) +
         " N_r=" + std::to_string(routed()));
  }
  if (alpha1 < 0.0 || alpha2 < 0.0) fail("balance factors must be non-negative");
}

ExpertWeights make_expert(int64_t d, int64_t inner, Rng& rng, double init_std) {
  ExpertWeights w;
  w.w_gate = Tensor::randn({d, inner}, rng, init_std);
  w.w_in = Tensor::randn({d, inner}, rng, init_std);
  w.w_out = Tensor::randn({inner, d}, rng, init_std);
  return w;
}

MoEParams make_moe_params(const MoEConfig& cfg, Rng rng, double init_std) {
  cfg.validate();
  MoEParams p;
  const int64_t inner = cfg.inner();
  for (int64_t i = 0; i < cfg.shared_experts; ++i) {
    p.shared.push_back(make_expert(cfg.hidden, inner, rng, init_std));
  }
  for (int64_t i = 0; i < cfg.routed(); ++i) {
    p.routed.push_back(make_expert(cfg.hidden, inner, rng, init_std));
  }
  if (cfg.routed() > 0) {
    p.router.centroids = Tensor::randn({cfg.routed(), cfg.hidden}, rng, init_std);
  }
  return p;
}

int64_t RoutingDecision::nonzero_gates() const {
  int64_t nz = 0;
  for (double g : gates) nz += (g != 0.0);
  return nz;
}

std::vector<double> RoutingDecision::selection_counts() const {
  std::vector<double> counts(n_routed, 0.0);
  for (const auto& sel : selected)
    for (int64_t e : sel) counts[e] += 1.0;
  return counts;
}

Tensor compute_affinities(const Tensor& u, const Router& router) {
  if (!router.centroids.defined()) throw ContractError("compute_affinities: router has no centroids");
  // logits[t][i] = u_t . e_i ; softmax over routed experts only.
  return softmax(matmul(u, transpose(router.centroids)), 1);
}

RoutingDecision route_topk(const Tensor& affinities, int64_t k,
                           const std::vector<std::vector<int64_t>>& mask) {
  if (!affinities.defined() || affinities.shape().size() != 2) {
    throw ContractError("route_topk: affinities must be a [tokens x experts] tensor");
  }
  const int64_t t_count = affinities.shape()[0];
  const int64_t n = affinities.shape()[1];
  if (k < 0) throw RoutingError("route_topk: negative k");
  if (!mask.empty() && static_cast<int64_t>(mask.size()) != 1 &&
      static_cast<int64_t>(mask.size()) != t_count) {
    throw RoutingError("route_topk: mask must cover one or all tokens, got " +
                       std::to_string(mask.size()) + " sets for " + std::to_string(t_count) + " tokens");
  }

  RoutingDecision dec;
  dec.affinities = affinities;
  dec.tokens = t_count;
  dec.n_routed = n;
  dec.selected.resize(t_count);
  dec.masked.resize(t_count);
  dec.gates.assign(t_count * n, 0.0);

  const double* s = affinities.data().data();
  std::vector<char> barred(n);
  std::vector<int64_t> order(n);
  for (int64_t t = 0; t < t_count; ++t) {
    std::fill(barred.begin(), barred.end(), 0);
    if (!mask.empty()) {
      const auto& mrow = mask.size() == 1 ? mask[0] : mask[t];
      for (int64_t e : mrow) {
        if (e < 0 || e >= n) {
          throw RoutingError("route_topk: masked expert " + std::to_string(e) + " outside 0.." +
                             std::to_string(n - 1));
        }
        barred[e] = 1;
      }
      dec.masked[t] = mrow;
      std::sort(dec.masked[t].begin(), dec.masked[t].end());
    }
    int64_t avail = std::count(barred.begin(), barred.end(), 0);
    if (avail < k) {
      throw RoutingError("route_topk: need top-" + std::to_string(k) + " but only " +
                         std::to_string(avail) + " experts are selectable");
    }
    order.clear();
    for (int64_t e = 0; e < n; ++e)
      if (!barred[e]) order.push_back(e);
    const double* row = s + t * n;
    // Exact ties resolve to the lower expert index.
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [row](int64_t a, int64_t b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });
    auto& sel = dec.selected[t];
    sel.assign(order.begin(), order.begin() + k);
    std::sort(sel.begin(), sel.end());
    for (int64_t e : sel) dec.gates[t * n + e] = row[e];
  }
  return dec;
}

Tensor expert_ffn(const Tensor& u, const ExpertWeights& w, Activation act) {
  Tensor gate = matmul(u, w.w_gate);
  Tensor gated = act == Activation::kSilu ? silu(gate) : gelu(gate);
  Tensor up = matmul(u, w.w_in);
  return matmul(mul(gated, up), w.w_out);
}

namespace {

// Per-token mask of the floor(ratio * N_r) highest-affinity experts.
std::vector<std::vector<int64_t>> top_affinity_mask(const Tensor& affinities, double ratio) {
  const int64_t t_count = affinities.shape()[0];
  const int64_t n = affinities.shape()[1];
  const int64_t barred = static_cast<int64_t>(std::floor(ratio * static_cast<double>(n)));
  std::vector<std::vector<int64_t>> mask(t_count);
  if (barred == 0) return mask;
  const double* s = affinities.data().data();
  std::vector<int64_t> order(n);
  for (int64_t t = 0; t < t_count; ++t) {
    std::iota(order.begin(), order.end(), 0);
    const double* row = s + t * n;
    std::partial_sort(order.begin(), order.begin() + barred, order.end(), [row](int64_t a, int64_t b) {
      if (row[a] != row[b]) return row[a] > row[b];
      return a < b;
    });
    mask[t].assign(order.begin(), order.begin() + barred);
  }
  return mask;
}

}  // namespace

std::pair<Tensor, RoutingDecision> moe_forward(const Tensor& u, const MoEConfig& cfg,
                                               const MoEParams& params, const RouteOverride* ov,
                                               const Tensor* residual) {
  cfg.validate();
  if (!u.defined() || u.shape().size() != 2 || u.shape()[1] != cfg.hidden) {
    throw DimensionError("moe_forward: input must be [tokens x " + std::to_string(cfg.hidden) +
                         "], got " + (u.defined() ? shape_str(u.shape()) : std::string("undefined")));
  }
  if (static_cast<int64_t>(params.shared.size()) != cfg.shared_experts ||
      static_cast<int64_t>(params.routed.size()) != cfg.routed()) {
    throw DimensionError("moe_forward: params hold " + std::to_string(params.shared.size()) + "+" +
                         std::to_string(params.routed.size()) + " experts, config wants " +
                         std::to_string(cfg.shared_experts) + "+" + std::to_string(cfg.routed()));
  }

  const bool drop_shared = ov != nullptr && ov->disable_shared;
  if (drop_shared && cfg.shared_experts < 1) {
    throw ContractError("moe_forward: disable_shared needs at least one shared expert");
  }

  int64_t k = cfg.active_routed();
  if (ov != nullptr && ov->topk_override > 0) k = ov->topk_override;
  if (drop_shared) k += cfg.shared_experts;
  if (k > cfg.routed()) {
    throw RoutingError("moe_forward: requested top-" + std::to_string(k) + " of " +
                       std::to_string(cfg.routed()) + " routed experts");
  }

  const Tensor& res = residual != nullptr ? *residual : u;
  if (res.shape() != u.shape()) {
    throw DimensionError("moe_forward: residual shape " + shape_str(res.shape()) +
                         " does not match input " + shape_str(u.shape()));
  }

  Tensor h = res;
  if (!drop_shared) {
    for (const ExpertWeights& w : params.shared) {
      h = add(h, expert_ffn(u, w, cfg.activation));
    }
  }

  RoutingDecision dec;
  if (cfg.routed() == 0) {
    // Fully shared layer: nothing to route.
    dec.tokens = u.shape()[0];
    dec.n_routed = 0;
    dec.selected.resize(dec.tokens);
    dec.masked.resize(dec.tokens);
    return {h, dec};
  }

  Tensor s = compute_affinities(u, params.router);

  std::vector<std::vector<int64_t>> mask;
  if (ov != nullptr) mask = ov->mask;
  if (ov != nullptr && ov->disable_top_ratio > 0.0) {
    auto top_mask = top_affinity_mask(s, ov->disable_top_ratio);
    if (mask.empty()) {
      mask = std::move(top_mask);
    } else {
      const int64_t t_count = s.shape()[0];
      std::vector<std::vector<int64_t>> merged(t_count);
      for (int64_t t = 0; t < t_count; ++t) {
        merged[t] = mask.size() == 1 ? mask[0] : mask[t];
        merged[t].insert(merged[t].end(), top_mask[t].begin(), top_mask[t].end());
      }
      mask = std::move(merged);
    }
  }

  dec = route_topk(s, k, mask);

  // Optional per-token renormalization of the selected gates to sum to one.
  Tensor inv_gate_sum;  // [T x 1]
  if (cfg.renormalize_gates && k > 0) {
    Tensor sel_mask = Tensor::zeros(s.shape());
    auto md = sel_mask.data();
    for (int64_t t = 0; t < dec.tokens; ++t)
      for (int64_t e : dec.selected[t]) md[t * dec.n_routed + e] = 1.0;
    Tensor ones = Tensor::full({dec.n_routed, 1}, 1.0);
    inv_gate_sum = reciprocal(matmul(mul(s, sel_mask), ones));
    for (int64_t t = 0; t < dec.tokens; ++t) {
      double z = 0.0;
      for (int64_t e : dec.selected[t]) z += dec.gates[t * dec.n_routed + e];
      if (z > 0.0)
        for (int64_t e : dec.selected[t]) dec.gates[t * dec.n_routed + e] /= z;
    }
  }

  // Dispatch: gather each expert's tokens, run its FFN once, scatter back.
  std::vector<std::vector<int64_t>> tokens_of(cfg.routed());
  for (int64_t t = 0; t < dec.tokens; ++t)
    for (int64_t e : dec.selected[t]) tokens_of[e].push_back(t);

  for (int64_t e = 0; e < cfg.routed(); ++e) {
    const auto& toks = tokens_of[e];
    if (toks.empty()) continue;
    Tensor u_e = gather_rows(u, toks);
    Tensor y = expert_ffn(u_e, params.routed[e], cfg.activation);
    Tensor g_col = gather_cols(gather_rows(s, toks), {e});  // [|toks| x 1]
    if (cfg.renormalize_gates) {
      g_col = mul(g_col, gather_rows(inv_gate_sum, toks));
    }
    h = add_rows_at(h, mul(y, g_col), toks);
  }
  return {h, dec};
}

MoEParamCounts count_params(const MoEConfig& cfg) {
  cfg.validate();
  MoEParamCounts c;
  const int64_t per_expert = 3 * cfg.hidden * cfg.inner();
  c.expert_total = cfg.total_fine() * per_expert;
  c.expert_activated = cfg.active_total() * per_expert;
  c.router = cfg.routed() * cfg.hidden;
  c.standard_ffn = 3 * cfg.hidden * cfg.base_ffn_inner;
  return c;
}

}  // namespace moelab
