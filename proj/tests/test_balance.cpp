// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "moelab/balance.hpp"
#include "moelab/moe.hpp"

using namespace moelab;

namespace {

// Decision with K'=1 per token: token t selects experts sel[t]; affinity rows
// passed explicitly so the closed forms are easy to state.
RoutingDecision make_decision(const std::vector<std::vector<int64_t>>& sel,
                              const std::vector<double>& affinity_rows, int64_t n_routed,
                              bool track = false) {
  RoutingDecision dec;
  dec.tokens = static_cast<int64_t>(sel.size());
  dec.n_routed = n_routed;
  dec.selected = sel;
  dec.masked.resize(sel.size());
  dec.gates.assign(static_cast<size_t>(dec.tokens * n_routed), 0.0);
  dec.affinities = Tensor::from(affinity_rows, {dec.tokens, n_routed}, track);
  return dec;
}

}  // namespace

TEST_CASE("a perfectly uniform batch scores exactly alpha1") {
  // 4 tokens, 4 experts, each selected once, uniform affinities.
  const std::vector<double> rows = {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25,
                                    0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25};
  RoutingDecision dec = make_decision({{0}, {1}, {2}, {3}}, rows, 4);
  BalanceStats st = balance_stats(dec);
  CHECK(st.f == std::vector<double>{1, 1, 1, 1});
  CHECK(st.p == std::vector<double>{0.25, 0.25, 0.25, 0.25});
  // binary-exact arithmetic all the way: strict equality, any alpha
  CHECK(expert_balance_loss(st, 0.003).item() == 0.003);
  CHECK(expert_balance_loss(st, 1.0).item() == 1.0);

  // device level over D=2 uniform groups is exactly alpha2 as well
  const DeviceGrouping dg = DeviceGrouping::contiguous(4, 2);
  CHECK(device_balance_loss(st, dg, 0.05).item() == 0.05);
}

TEST_CASE("a fully collapsed batch scores the textbook 2.8 example") {
  // counts [4,0,0,0] -> f [4,0,0,0]; P [0.7,0.1,0.1,0.1]
  const std::vector<double> row = {0.7, 0.1, 0.1, 0.1};
  std::vector<double> rows;
  for (int t = 0; t < 4; ++t) rows.insert(rows.end(), row.begin(), row.end());
  RoutingDecision dec = make_decision({{0}, {0}, {0}, {0}}, rows, 4);
  BalanceStats st = balance_stats(dec);
  CHECK(st.f == std::vector<double>{4, 0, 0, 0});
  CHECK(expert_balance_loss(st, 1.0).item() == doctest::Approx(2.8).epsilon(1e-15));
  CHECK(expert_balance_loss(st, 0.01).item() == doctest::Approx(0.028).epsilon(1e-15));

  // grouped into two devices: f' = [2,0], P' = [0.8,0.2] -> 1.6
  const DeviceGrouping dg = DeviceGrouping::contiguous(4, 2);
  CHECK(device_balance_loss(st, dg, 1.0).item() == doctest::Approx(1.6).epsilon(1e-15));
  CHECK(device_balance_loss(st, dg, 0.05).item() == doctest::Approx(0.08).epsilon(1e-15));
}

TEST_CASE("one device group makes the device loss a constant alpha2") {
  // With D=1: f' = mean f = 1, P' = sum P = 1, regardless of distribution.
  const std::vector<double> rows = {0.7, 0.1, 0.1, 0.1, 0.025, 0.9, 0.05, 0.025,
                                    0.7, 0.1, 0.1, 0.1, 0.025, 0.9, 0.05, 0.025};
  RoutingDecision dec = make_decision({{0}, {1}, {0}, {1}}, rows, 4);
  BalanceStats st = balance_stats(dec);
  const DeviceGrouping dg = DeviceGrouping::contiguous(4, 1);
  CHECK(device_balance_loss(st, dg, 0.05).item() == doctest::Approx(0.05).epsilon(1e-14));
}

TEST_CASE("alignment of load and affinity can only raise the loss above alpha1") {
  // When P_i is proportional to f_i (gates follow loads), Cauchy-Schwarz gives
  // sum f_i P_i = sum f_i^2 / N' >= (sum f_i)^2 / N'^2 = 1, equality iff uniform.
  const std::vector<std::vector<std::vector<int64_t>>> patterns = {
      {{0}, {0}, {1}, {2}},   // mild skew
      {{0}, {0}, {0}, {1}},   // strong skew
      {{3}, {3}, {3}, {3}},   // collapse
      {{0}, {1}, {2}, {3}}};  // uniform
  for (const auto& sel : patterns) {
    std::vector<double> counts(4, 0.0);
    for (const auto& s : sel) counts[static_cast<size_t>(s[0])] += 1.0;
    std::vector<double> row(4);
    for (size_t i = 0; i < 4; ++i) row[i] = counts[i] / 4.0;  // P tracks load
    std::vector<double> rows;
    for (int t = 0; t < 4; ++t) rows.insert(rows.end(), row.begin(), row.end());
    RoutingDecision dec = make_decision(sel, rows, 4);
    const double loss = expert_balance_loss(balance_stats(dec), 1.0).item();
    CHECK(loss >= 1.0 - 1e-15);
  }
}

TEST_CASE("gradients flow through mean affinities with selection counts frozen") {
  const std::vector<double> rows = {0.4, 0.3, 0.2, 0.1, 0.1, 0.2, 0.3, 0.4};
  Graph g;
  RoutingDecision dec = make_decision({{0}, {3}}, rows, 4, /*track=*/true);
  BalanceStats st = balance_stats(dec);
  Tensor loss = expert_balance_loss(st, 0.5);
  g.backward(loss);
  // d loss / d s_{t,i} = alpha1 * f_i / T, identical for every token t
  const auto grad = dec.affinities.grad();
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t i = 0; i < 4; ++i)
      CHECK(grad[t * 4 + i] == doctest::Approx(0.5 * st.f[static_cast<size_t>(i)] / 2.0).epsilon(1e-14));
}

TEST_CASE("pooling decisions averages P and repools counts") {
  const std::vector<double> rows1 = {0.5, 0.5, 0.25, 0.75};
  const std::vector<double> rows2 = {0.125, 0.875, 0.625, 0.375};
  RoutingDecision d1 = make_decision({{0}, {1}}, rows1, 2);
  RoutingDecision d2 = make_decision({{0}, {0}}, rows2, 2);
  const std::vector<RoutingDecision> both = {d1, d2};
  BalanceStats st = pooled_balance_stats(both);
  CHECK(st.tokens == 4);
  CHECK(st.counts == std::vector<double>{3, 1});
  CHECK(st.f == std::vector<double>{1.5, 0.5});  // 2/(1*4) * counts
  // p: mean of the two per-batch means, exact with these binary fractions
  CHECK(st.p[0] == 0.375);
  CHECK(st.p[1] == 0.625);

  RoutingDecision odd = make_decision({{0}}, {0.5, 0.5}, 2);
  const std::vector<RoutingDecision> bad = {d1, odd};
  CHECK_THROWS_AS(pooled_balance_stats(bad), ContractError);
}

TEST_CASE("balance_stats rejects ragged selections") {
  RoutingDecision dec = make_decision({{0}, {1}}, {0.5, 0.5, 0.5, 0.5}, 2);
  dec.selected[1] = {0, 1};
  CHECK_THROWS_AS(balance_stats(dec), ContractError);
}

TEST_CASE("load dispersion summarizes f") {
  const std::vector<double> rows(16, 0.25);
  RoutingDecision dec = make_decision({{0}, {0}, {0}, {0}}, rows, 4);
  BalanceStats st = balance_stats(dec);
  LoadDispersion d = load_dispersion(st);
  CHECK(d.max_over_mean == 4.0);                       // f = [4,0,0,0]
  CHECK(d.cv == doctest::Approx(std::sqrt(3.0)).epsilon(1e-15));

  RoutingDecision uniform = make_decision({{0}, {1}, {2}, {3}}, rows, 4);
  LoadDispersion du = load_dispersion(balance_stats(uniform));
  CHECK(du.max_over_mean == 1.0);
  CHECK(du.cv == 0.0);
}

TEST_CASE("device grouping validation") {
  CHECK_THROWS_AS(DeviceGrouping::contiguous(7, 2), ContractError);
  DeviceGrouping g = DeviceGrouping::contiguous(4, 2);
  g.groups[1][0] = 0;  // expert 0 in two groups
  CHECK_THROWS_AS(g.validate(4), ContractError);
  g.groups[1][0] = 9;  // out of range
  CHECK_THROWS_AS(g.validate(4), ContractError);
  g = DeviceGrouping::contiguous(4, 2);
  g.groups.pop_back();  // missing experts
  CHECK_THROWS_AS(g.validate(4), ContractError);
}
