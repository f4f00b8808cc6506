// SPDX-License-Identifier: Apache-2.0

#include "moelab/balance.hpp"

#include <algorithm>
#include <cmath>

#include "moelab/errors.hpp"

namespace moelab {

namespace {

void finish_stats(BalanceStats& st) {
  st.f.assign(st.n_routed, 0.0);
  if (st.tokens == 0 || st.k_active == 0) return;
  const double scale = static_cast<double>(st.n_routed) /
                       (static_cast<double>(st.k_active) * static_cast<double>(st.tokens));
  for (int64_t i = 0; i < st.n_routed; ++i) st.f[i] = scale * st.counts[i];
}

// Mean over tokens of each affinity column, as a [1 x N'] tape tensor.
Tensor mean_affinity_row(const Tensor& affinities) {
  const int64_t t_count = affinities.shape()[0];
  Tensor ones = Tensor::full({1, t_count}, 1.0);
  return scale(matmul(ones, affinities), 1.0 / static_cast<double>(t_count));
}

}  // namespace

BalanceStats balance_stats(const RoutingDecision& dec) {
  BalanceStats st;
  st.tokens = dec.tokens;
  st.n_routed = dec.n_routed;
  st.k_active = dec.tokens > 0 ? static_cast<int64_t>(dec.selected[0].size()) : 0;
  for (const auto& sel : dec.selected) {
    if (static_cast<int64_t>(sel.size()) != st.k_active) {
      throw ContractError("balance_stats: tokens select unequal expert counts");
    }
  }
  st.counts = dec.selection_counts();
  finish_stats(st);

  st.p.assign(st.n_routed, 0.0);
  if (dec.affinities.defined() && dec.tokens > 0) {
    const double* s = dec.affinities.data().data();
    for (int64_t t = 0; t < st.tokens; ++t)
      for (int64_t i = 0; i < st.n_routed; ++i) st.p[i] += s[t * st.n_routed + i];
    for (double& v : st.p) v /= static_cast<double>(st.tokens);
    st.p_row = mean_affinity_row(dec.affinities);
  }
  return st;
}

BalanceStats pooled_balance_stats(std::span<const RoutingDecision> decs) {
  if (decs.empty()) throw ContractError("pooled_balance_stats: no decisions");
  BalanceStats st = balance_stats(decs[0]);
  if (decs.size() == 1) return st;

  Tensor p_acc = st.p_row;
  for (size_t i = 1; i < decs.size(); ++i) {
    BalanceStats cur = balance_stats(decs[i]);
    if (cur.n_routed != st.n_routed || cur.tokens != st.tokens || cur.k_active != st.k_active) {
      throw ContractError("pooled_balance_stats: decisions have mismatched shapes");
    }
    for (int64_t e = 0; e < st.n_routed; ++e) {
      st.counts[e] += cur.counts[e];
      st.p[e] += cur.p[e];
    }
    if (p_acc.defined() && cur.p_row.defined()) p_acc = add(p_acc, cur.p_row);
  }
  st.tokens *= static_cast<int64_t>(decs.size());
  const double inv = 1.0 / static_cast<double>(decs.size());
  for (double& v : st.p) v *= inv;
  if (p_acc.defined()) st.p_row = scale(p_acc, inv);
  finish_stats(st);
  return st;
}

Tensor expert_balance_loss(const BalanceStats& stats, double alpha1) {
  if (stats.n_routed == 0) return Tensor::scalar(0.0);
  if (static_cast<int64_t>(stats.f.size()) != stats.n_routed) {
    throw ContractError("expert_balance_loss: stats carry no selection fractions");
  }
  if (stats.p_row.defined()) {
    Tensor f_col = Tensor::from(stats.f, {stats.n_routed, 1});
    return scale(matmul(stats.p_row, f_col), alpha1);
  }
  double s = 0.0;
  for (int64_t i = 0; i < stats.n_routed; ++i) s += stats.f[i] * stats.p[i];
  return Tensor::scalar(alpha1 * s);
}

DeviceGrouping DeviceGrouping::contiguous(int64_t n_routed, int64_t d) {
  if (d < 1) throw ContractError("DeviceGrouping: need at least one group");
  if (n_routed % d != 0) {
    throw ContractError("DeviceGrouping: " + std::to_string(d) + " groups do not divide " +
                        std::to_string(n_routed) + " experts evenly");
  }
  DeviceGrouping g;
  const int64_t per = n_routed / d;
  for (int64_t i = 0; i < d; ++i) {
    std::vector<int64_t> grp(per);
    for (int64_t j = 0; j < per; ++j) grp[j] = i * per + j;
    g.groups.push_back(std::move(grp));
  }
  return g;
}

void DeviceGrouping::validate(int64_t n_routed) const {
  std::vector<char> seen(n_routed, 0);
  for (const auto& grp : groups) {
    if (grp.empty()) throw ContractError("DeviceGrouping: empty group");
    for (int64_t e : grp) {
      if (e < 0 || e >= n_routed) {
        throw ContractError("DeviceGrouping: expert " + std::to_string(e) + " outside 0.." +
                            std::to_string(n_routed - 1));
      }
      if (seen[e]) throw ContractError("DeviceGrouping: expert " + std::to_string(e) + " in two groups");
      seen[e] = 1;
    }
  }
  if (std::count(seen.begin(), seen.end(), 1) != n_routed) {
    throw ContractError("DeviceGrouping: groups do not cover all routed experts");
  }
}

Tensor device_balance_loss(const BalanceStats& stats, const DeviceGrouping& grouping, double alpha2) {
  if (stats.n_routed == 0) return Tensor::scalar(0.0);
  grouping.validate(stats.n_routed);

  // sum_i f'_i P'_i  ==  sum_j w_j P_j with w_j the group-mean of f.
  std::vector<double> w(stats.n_routed, 0.0);
  for (const auto& grp : grouping.groups) {
    double mean_f = 0.0;
    for (int64_t e : grp) mean_f += stats.f[e];
    mean_f /= static_cast<double>(grp.size());
    for (int64_t e : grp) w[e] = mean_f;
  }

  if (stats.p_row.defined()) {
    Tensor w_col = Tensor::from(w, {stats.n_routed, 1});
    return scale(matmul(stats.p_row, w_col), alpha2);
  }
  double s = 0.0;
  for (int64_t i = 0; i < stats.n_routed; ++i) s += w[i] * stats.p[i];
  return Tensor::scalar(alpha2 * s);
}

LoadDispersion load_dispersion(const BalanceStats& stats) {
  LoadDispersion d;
  if (stats.n_routed == 0) return d;
  double mean = 0.0, mx = 0.0;
  for (double v : stats.f) {
    mean += v;
    mx = std::max(mx, v);
  }
  mean /= static_cast<double>(stats.n_routed);
  if (mean <= 0.0) return d;
  double var = 0.0;
  for (double v : stats.f) var += (v - mean) * (v - mean);
  var /= static_cast<double>(stats.n_routed);
  d.max_over_mean = mx / mean;
  d.cv = std::sqrt(var) / mean;
  return d;
}

}  // namespace moelab
