// SPDX-License-Identifier: Apache-2.0

#include "moelab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "moelab/errors.hpp"
#include "moelab/rng.hpp"

namespace moelab {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(max_lr > 0.0)) fail("max_lr must be positive");
  if (warmup_steps < 1) fail("warmup_steps must be at least 1");
  if (total_steps < 0) fail("total_steps must be non-negative");
  for (double p : decay_points) {
    if (p <= 0.0 || p >= 1.0) fail("decay points must lie in (0, 1), got " + std::to_string(p));
  }
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) fail("decay_factor must lie in (0, 1]");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (weight_decay < 0.0) fail("weight_decay must be non-negative");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (grad_clip_norm < 0.0) fail("grad_clip_norm must be non-negative (0 disables)");
  if (log_interval < 1) fail("log_interval must be at least 1");
  if (eval_fraction < 0.0 || eval_fraction >= 1.0) fail("eval_fraction must lie in [0, 1)");
  if (batch_tokens < 0) fail("batch_tokens must be non-negative");
}

double lr_schedule(int64_t step, const TrainConfig& cfg) {
  if (step <= 0) return 0.0;
  if (step <= cfg.warmup_steps) {
    return cfg.max_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  double lr = cfg.max_lr;
  for (double p : cfg.decay_points) {
    if (static_cast<double>(step) >= p * static_cast<double>(cfg.total_steps)) lr *= cfg.decay_factor;
  }
  return lr;
}

AdamW::AdamW(std::vector<Tensor> params, const TrainConfig& cfg)
    : params_(std::move(params)),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      weight_decay_(cfg.weight_decay) {
  for (Tensor& p : params_) {
    if (!p.requires_grad()) throw ContractError("AdamW: parameter without requires_grad");
    p.ensure_grad();
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void AdamW::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    p.ensure_grad();
    auto w = p.data();
    auto g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * weight_decay_ * w[j];           // decoupled decay
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  if (max_norm <= 0.0) return 1.0;
  double sq = 0.0;
  for (const Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return 1.0;
  const double scale = max_norm / norm;
  for (Tensor& p : params) {
    if (!p.has_grad()) continue;
    for (double& g : p.grad()) g *= scale;
  }
  return scale;
}

std::string RunMetrics::to_csv() const {
  std::string out = kCsvHeader;
  out.push_back('\n');
  char buf[256];
  for (const MetricsRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%lld\n",
                  static_cast<long long>(r.step), r.lm_loss, r.expbal, r.devbal, r.load_max_mean,
                  r.load_cv, r.lr, static_cast<long long>(r.wall_ms));
    out += buf;
  }
  return out;
}

void RunMetrics::write_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("metrics: cannot open '" + path + "' for writing");
  os << to_csv();
  if (!os) throw ConfigError("metrics: write to '" + path + "' failed");
}

namespace {

// Draws one window of seq_len+1 tokens (inputs + shifted targets).
std::vector<int> sample_window(std::span<const int> region, int64_t window, Rng& rng) {
  const int64_t span = static_cast<int64_t>(region.size()) - window;
  if (span < 0) {
    throw ConfigError("train: corpus region of " + std::to_string(region.size()) +
                      " tokens cannot fill a window of " + std::to_string(window));
  }
  const int64_t start = span == 0 ? 0 : static_cast<int64_t>(rng.uniform_int(span + 1));
  return std::vector<int>(region.begin() + start, region.begin() + start + window);
}

struct StepLosses {
  double lm = 0.0, expbal = 0.0, devbal = 0.0;
  BalanceStats pooled;  // across the batch and layers, for the load columns
};

}  // namespace

TrainResult train(const ModelConfig& cfg, ModelParams& params, const TokenCorpus& corpus,
                  const TrainConfig& tc) {
  cfg.validate();
  tc.validate();
  if (corpus.vocab > cfg.vocab) {
    throw ConfigError("train: corpus vocab " + std::to_string(corpus.vocab) + " exceeds model vocab " +
                      std::to_string(cfg.vocab));
  }
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed_ms = [&t0] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  const std::span<const int> region = corpus.train_split(tc.eval_fraction);
  const int64_t window = cfg.seq_len + 1;
  const int64_t seqs_per_step = std::max<int64_t>(1, tc.batch_tokens / cfg.seq_len);

  std::vector<Tensor> plist = collect_params(cfg, params);
  AdamW opt(plist, tc);
  Rng data_rng = Rng(tc.seed).substream("data");

  const DeviceGrouping grouping = cfg.moe.device_groups > 1
                                      ? DeviceGrouping::contiguous(cfg.moe.routed(), cfg.moe.device_groups)
                                      : DeviceGrouping{};
  const bool want_expbal = cfg.moe.alpha1 > 0.0;
  const bool want_devbal = cfg.moe.alpha2 > 0.0 && cfg.moe.device_groups > 1;

  TrainResult result;
  MetricsRow last_row;

  for (int64_t step = 1; step <= tc.total_steps; ++step) {
    const double lr = lr_schedule(step, tc);

    Graph graph;
    Tensor lm_total, expbal_total, devbal_total;
    std::vector<std::vector<RoutingDecision>> per_layer;  // [layer][seq]
    for (int64_t b = 0; b < seqs_per_step; ++b) {
      std::vector<int> win = sample_window(region, window, data_rng);
      std::vector<int> inputs(win.begin(), win.end() - 1);
      std::vector<int> targets(win.begin() + 1, win.end());
      ForwardResult fwd = model_forward(inputs, cfg, params);
      Tensor lm = cross_entropy(fwd.logits, targets);
      lm_total = lm_total.defined() ? add(lm_total, lm) : lm;
      if (per_layer.empty()) per_layer.resize(fwd.decisions.size());
      for (size_t l = 0; l < fwd.decisions.size(); ++l) per_layer[l].push_back(std::move(fwd.decisions[l]));
    }

    std::vector<BalanceStats> layer_stats;
    layer_stats.reserve(per_layer.size());
    for (auto& decs : per_layer) layer_stats.push_back(pooled_balance_stats(decs));

    if (want_expbal || want_devbal) {
      for (const BalanceStats& st : layer_stats) {
        if (want_expbal) {
          Tensor e = expert_balance_loss(st, cfg.moe.alpha1);
          expbal_total = expbal_total.defined() ? add(expbal_total, e) : e;
        }
        if (want_devbal) {
          Tensor dv = device_balance_loss(st, grouping, cfg.moe.alpha2);
          devbal_total = devbal_total.defined() ? add(devbal_total, dv) : dv;
        }
      }
      const double layer_scale =
          tc.balance_layer_mean && !per_layer.empty() ? 1.0 / static_cast<double>(per_layer.size()) : 1.0;
      if (expbal_total.defined() && layer_scale != 1.0) expbal_total = scale(expbal_total, layer_scale);
      if (devbal_total.defined() && layer_scale != 1.0) devbal_total = scale(devbal_total, layer_scale);
    }

    Tensor lm_mean = scale(lm_total, 1.0 / static_cast<double>(seqs_per_step));
    Tensor loss = lm_mean;
    if (expbal_total.defined()) loss = add(loss, expbal_total);
    if (devbal_total.defined()) loss = add(loss, devbal_total);

    const double lm_v = lm_mean.item();
    const double exp_v = expbal_total.defined() ? expbal_total.item() : 0.0;
    const double dev_v = devbal_total.defined() ? devbal_total.item() : 0.0;
    const double loss_v = loss.item();
    if (!std::isfinite(loss_v)) {
      throw NumericError("train: non-finite loss at step " + std::to_string(step) + " (lm=" +
                         std::to_string(lm_v) + " expbal=" + std::to_string(exp_v) + " devbal=" +
                         std::to_string(dev_v) + ")");
    }

    graph.backward(loss);
    clip_grad_norm(plist, tc.grad_clip_norm);
    opt.step(lr);
    opt.zero_grad();

    if (step % tc.log_interval == 0 || step == tc.total_steps) {
      // Pool this step's routing across layers for the load columns.
      BalanceStats all;
      if (!layer_stats.empty()) {
        all = layer_stats[0];
        for (size_t l = 1; l < layer_stats.size(); ++l) {
          for (int64_t e = 0; e < all.n_routed; ++e) all.counts[e] += layer_stats[l].counts[e];
          all.tokens += layer_stats[l].tokens;
        }
        const double scale_f = static_cast<double>(all.n_routed) /
                               (static_cast<double>(all.k_active) * static_cast<double>(all.tokens));
        for (int64_t e = 0; e < all.n_routed; ++e) all.f[e] = scale_f * all.counts[e];
      }
      const LoadDispersion disp = load_dispersion(all);
      MetricsRow row;
      row.step = step;
      row.lm_loss = lm_v;
      row.expbal = exp_v;
      row.devbal = dev_v;
      row.load_max_mean = disp.max_over_mean;
      row.load_cv = disp.cv;
      row.lr = lr;
      row.wall_ms = tc.record_wall_time ? elapsed_ms() : 0;
      result.metrics.rows.push_back(row);
      last_row = row;
    }
  }

  result.final_lm_loss = last_row.lm_loss;
  result.final_load_cv = last_row.load_cv;
  result.final_load_max_mean = last_row.load_max_mean;
  result.wall_ms = elapsed_ms();
  return result;
}

double eval_lm_loss(const ModelConfig& cfg, const ModelParams& params, std::span<const int> tokens,
                    int64_t max_tokens, const RouteOverride* ov) {
  const int64_t window = cfg.seq_len + 1;
  if (static_cast<int64_t>(tokens.size()) < window) {
    throw ConfigError("eval: need at least " + std::to_string(window) + " tokens, have " +
                      std::to_string(tokens.size()));
  }
  double total = 0.0;
  int64_t windows = 0, used = 0;
  for (int64_t start = 0; start + window <= static_cast<int64_t>(tokens.size()); start += cfg.seq_len) {
    if (max_tokens > 0 && used >= max_tokens) break;
    std::vector<int> inputs(tokens.begin() + start, tokens.begin() + start + cfg.seq_len);
    std::vector<int> targets(tokens.begin() + start + 1, tokens.begin() + start + window);
    ForwardResult fwd = model_forward(inputs, cfg, params, ov);
    total += cross_entropy(fwd.logits, targets).item();
    ++windows;
    used += cfg.seq_len;
  }
  return total / static_cast<double>(windows);
}

BalanceStats eval_balance_stats(const ModelConfig& cfg, const ModelParams& params,
                                std::span<const int> tokens, int64_t max_tokens) {
  const int64_t window = cfg.seq_len + 1;
  if (static_cast<int64_t>(tokens.size()) < window) {
    throw ConfigError("eval: need at least " + std::to_string(window) + " tokens, have " +
                      std::to_string(tokens.size()));
  }
  BalanceStats pooled;
  bool first = true;
  int64_t used = 0;
  for (int64_t start = 0; start + window <= static_cast<int64_t>(tokens.size()); start += cfg.seq_len) {
    if (max_tokens > 0 && used >= max_tokens) break;
    std::vector<int> inputs(tokens.begin() + start, tokens.begin() + start + cfg.seq_len);
    ForwardResult fwd = model_forward(inputs, cfg, params);
    for (const RoutingDecision& dec : fwd.decisions) {
      BalanceStats st = balance_stats(dec);
      if (first) {
        pooled = std::move(st);
        pooled.p_row = Tensor();  // plain statistics only
        first = false;
      } else {
        for (int64_t e = 0; e < pooled.n_routed; ++e) pooled.counts[e] += st.counts[e];
        pooled.tokens += st.tokens;
      }
    }
    used += cfg.seq_len;
  }
  if (first) return pooled;
  const double scale_f = static_cast<double>(pooled.n_routed) /
                         (static_cast<double>(pooled.k_active) * static_cast<double>(pooled.tokens));
  for (int64_t e = 0; e < pooled.n_routed; ++e) pooled.f[e] = scale_f * pooled.counts[e];
  // p is stale after pooling; recompute as count-weighted means is not needed
  // for load statistics, so clear it to avoid misuse.
  pooled.p.clear();
  return pooled;
}

}  // namespace moelab
