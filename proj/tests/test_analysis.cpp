// SPDX-License-Identifier: Apache-2.0
//
// Probes, ablation matrix, and FLOP accounting.

#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <string>
#include <vector>

#include "moelab/analysis.hpp"
#include "moelab/errors.hpp"
#include "moelab/model.hpp"
#include "test_util.hpp"

using namespace moelab;
using testutil::pattern_corpus;
using testutil::pattern_tokens;
using testutil::tiny_model;

TEST_CASE("disable-top at ratio zero reproduces the baseline bit for bit") {
  const ModelConfig cfg = tiny_model();
  const ModelParams params = init_params(cfg, 5);
  const std::vector<int> toks = pattern_tokens(512, 32);

  const ProbeReport rep = probe_disable_top(cfg, params, toks, 256, {0.0, 0.5});
  CHECK(rep.probe == "disable_top_routed");
  REQUIRE(rep.points.size() == 2);
  CHECK(rep.points[0].value == 0.0);
  CHECK(rep.points[0].eval_loss == rep.baseline_loss);  // exact, not approximate
  CHECK(rep.points[1].value == 0.5);
  // N_r = 3, so ratio 0.5 masks floor(1.5) = 1 expert and the loss moves.
  CHECK(rep.points[1].eval_loss != rep.baseline_loss);

  CHECK_THROWS_AS(probe_disable_top(cfg, params, toks, 256, {1.0}), DomainError);
  CHECK_THROWS_AS(probe_disable_top(cfg, params, toks, 256, {-0.1}), DomainError);
}

TEST_CASE("vary-activated at the configured k is the baseline") {
  const ModelConfig cfg = tiny_model();
  const ModelParams params = init_params(cfg, 6);
  const std::vector<int> toks = pattern_tokens(512, 32);

  // tiny_model routes K_r = 1 expert per token.
  REQUIRE(cfg.moe.active_routed() == 1);
  const ProbeReport rep = probe_vary_activated(cfg, params, toks, 256, {1, 2, 3});
  CHECK(rep.probe == "vary_activated");
  REQUIRE(rep.points.size() == 3);
  CHECK(rep.points[0].value == 1.0);
  CHECK(rep.points[0].eval_loss == rep.baseline_loss);
  CHECK(rep.points[1].eval_loss != rep.baseline_loss);

  // N_r = 3 routed experts exist, so k = 4 cannot be satisfied.
  CHECK_THROWS_AS(probe_vary_activated(cfg, params, toks, 256, {4}), RoutingError);
  CHECK_THROWS_AS(probe_vary_activated(cfg, params, toks, 256, {0}), DomainError);
}

TEST_CASE("disable-shared requires a shared expert to remove") {
  const ModelConfig cfg = tiny_model();
  const ModelParams params = init_params(cfg, 7);
  const std::vector<int> toks = pattern_tokens(512, 32);

  const ProbeReport rep = probe_disable_shared(cfg, params, toks, 256);
  CHECK(rep.probe == "disable_shared");
  REQUIRE(rep.points.size() == 1);
  CHECK(rep.points[0].value == 1.0);

  ModelConfig none = tiny_model();
  none.moe.shared_experts = 0;
  none.validate();
  const ModelParams p2 = init_params(none, 7);
  CHECK_THROWS_AS(probe_disable_shared(none, p2, toks, 256), ContractError);
}

TEST_CASE("probe report serialization") {
  ProbeReport rep;
  rep.probe = "vary_activated";
  rep.baseline_loss = 1.5;
  rep.points = {{1.0, 2.25}, {2.0, 2.0}};

  SUBCASE("plot data is gnuplot-ready") {
    const std::string tsv = rep.to_plot_data();
    CHECK(tsv.rfind("# vary_activated", 0) == 0);
    CHECK(tsv.find("baseline 1.5") != std::string::npos);
    CHECK(tsv.find("1\t2.25\n") != std::string::npos);
    CHECK(tsv.find("2\t2\n") != std::string::npos);
    // header + one line per point
    CHECK(std::count(tsv.begin(), tsv.end(), '\n') == 3);
  }

  SUBCASE("json carries the points and optional config echo") {
    const nlohmann::json j = nlohmann::json::parse(rep.to_json(""));
    CHECK(j.at("schema_version") == 1);
    CHECK(j.at("probe") == "vary_activated");
    CHECK(j.at("baseline_loss") == 1.5);
    REQUIRE(j.at("points").size() == 2);
    CHECK(j["points"][0].at("value") == 1.0);
    CHECK(j["points"][0].at("eval_loss") == 2.25);
    CHECK(!j.contains("config"));

    const nlohmann::json k = nlohmann::json::parse(rep.to_json("{\"note\":\"x\"}"));
    CHECK(k.at("config").at("note") == "x");
  }
}

namespace {

// Base shape whose expert budget slices evenly for every ablation variant:
// 32 is divisible by 2 and 4 and stays 8-aligned throughout.
ModelConfig ablation_base() {
  ModelConfig cfg = tiny_model();
  cfg.moe.base_experts = 4;
  cfg.moe.segmentation = 1;
  cfg.moe.base_topk = 2;
  cfg.moe.shared_experts = 0;
  cfg.moe.base_ffn_inner = 32;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("ablation variants re-slice a fixed expert budget") {
  const ModelConfig base = ablation_base();
  const std::vector<std::string> names = ablation_variant_names();
  REQUIRE(names.size() == 7);

  int64_t ref_total = -1, ref_active = -1;
  for (const std::string& name : names) {
    ModelConfig cfg = base;
    cfg.moe = ablation_variant(base.moe, name);
    cfg.validate();
    const ModelParamCounts c = count_params(cfg);
    if (ref_total < 0) {
      ref_total = c.expert_total;
      ref_active = c.expert_activated;
    }
    CHECK(c.expert_total == ref_total);
    CHECK(c.expert_activated == ref_active);
  }

  const MoEConfig top2 = ablation_variant(base.moe, "gshard-top2");
  CHECK(top2.segmentation == 1);
  CHECK(top2.shared_experts == 0);
  CHECK(top2.routed() == 4);
  CHECK(top2.active_routed() == 2);

  const MoEConfig r4 = ablation_variant(base.moe, "ratio-4-shared");
  CHECK(r4.total_fine() == 16);
  CHECK(r4.routed() == 12);
  CHECK(r4.active_routed() == 4);
  CHECK(r4.active_total() == 8);

  // Two names for the same point in the family.
  const MoEConfig a = ablation_variant(base.moe, "x4-segmentation");
  const MoEConfig b = ablation_variant(base.moe, "ratio-1-shared");
  CHECK(a.segmentation == b.segmentation);
  CHECK(a.shared_experts == b.shared_experts);
  CHECK(a.base_topk == b.base_topk);
  CHECK(a.inner() == b.inner());

  CHECK_THROWS_AS(ablation_variant(base.moe, "switch-top1"), ConfigError);
}

TEST_CASE("ablation matrix trains every variant on an equal budget") {
  const ModelConfig base = ablation_base();
  const TokenCorpus corpus = pattern_corpus(2048, 32);

  TrainConfig tc;
  tc.max_lr = 1e-3;
  tc.warmup_steps = 1;
  tc.total_steps = 3;
  tc.batch_tokens = 32;
  tc.seed = 11;
  tc.log_interval = 1;
  tc.eval_fraction = 0.25;

  const std::vector<AblationRow> rows = ablation_matrix(base, corpus, tc, {}, 128);
  const std::vector<std::string> names = ablation_variant_names();
  REQUIRE(rows.size() == names.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].variant == names[i]);
    CHECK(rows[i].expert_total == rows[0].expert_total);
    CHECK(rows[i].expert_activated == rows[0].expert_activated);
    CHECK(rows[i].eval_loss > 0.0);
    CHECK(rows[i].total >= rows[i].activated);
  }
  // x4-segmentation and ratio-1-shared are the same architecture; same seed,
  // same corpus, so training must land on the same loss to the last bit.
  CHECK(rows[3].eval_loss == rows[4].eval_loss);
}

TEST_CASE("ablation matrix refuses unequal expert budgets") {
  // 136/4 = 34 rounds up to 40 after 8-alignment, so the x4 slice overshoots.
  ModelConfig bad = ablation_base();
  bad.moe.base_ffn_inner = 136;
  bad.validate();
  const TokenCorpus corpus = pattern_corpus(512, 32);
  TrainConfig tc;
  tc.total_steps = 1;
  tc.warmup_steps = 1;

  bool threw = false;
  try {
    ablation_matrix(bad, corpus, tc, {"gshard-top2", "x4-segmentation"}, 64);
  } catch (const ConfigError& e) {
    threw = true;
    CHECK(std::string(e.what()).find("breaks the expert budget") != std::string::npos);
  }
  CHECK(threw);
}

TEST_CASE("flop estimate closed form") {
  // tiny_model at one full window: every term is a small exact integer.
  const ModelConfig cfg = tiny_model();  // 1 layer, d=16, 2 heads x 8, V=32, T=16
  REQUIRE(cfg.moe.inner() == 8);
  REQUIRE(cfg.moe.active_total() == 2);
  REQUIRE(cfg.moe.routed() == 3);

  SUBCASE("hand-computed breakdown at t = seq_len") {
    const FlopsBreakdown f = flops_estimate(cfg, 16);
    // forward terms, then x3 for forward + backward
    CHECK(f.attention_linear == 3.0 * 32768.0);   // 1*2 heads * 4 mats * 2*16*16*8
    CHECK(f.attention_quadratic == 3.0 * 16384.0);  // 1*2 * 2 mats * 2*8*16^2
    CHECK(f.experts == 3.0 * 26112.0);  // 16*2*3*2*16*8 expert FFNs + 2*16*16*3 router
    CHECK(f.head == 3.0 * 16384.0);     // 2*16*16*32
    CHECK(f.embedding == 0.0);
    CHECK(f.total == f.attention_linear + f.attention_quadratic + f.experts + f.head);
  }

  SUBCASE("embedding-and-head-only model") {
    ModelConfig flat = cfg;
    flat.layers = 0;
    flat.validate();
    const FlopsBreakdown f = flops_estimate(flat, 1000);
    CHECK(f.attention_linear == 0.0);
    CHECK(f.attention_quadratic == 0.0);
    CHECK(f.experts == 0.0);
    CHECK(f.head == 3.0 * 2.0 * 1000.0 * 16.0 * 32.0);
    CHECK(f.total == f.head);
  }

  SUBCASE("attention cost is quadratic per window, linear across windows") {
    const double q_full = flops_estimate(cfg, 16).attention_quadratic;
    const double q_half = flops_estimate(cfg, 8).attention_quadratic;
    const double q_two = flops_estimate(cfg, 32).attention_quadratic;
    CHECK(q_full == 4.0 * q_half);  // half a window costs a quarter
    CHECK(q_two == 2.0 * q_full);   // two windows cost double
    CHECK(flops_estimate(cfg, 32).attention_linear ==
          2.0 * flops_estimate(cfg, 16).attention_linear);
    // 24 tokens = one full window + an 8-token tail
    CHECK(flops_estimate(cfg, 24).attention_quadratic == q_full + q_half);
  }

  SUBCASE("a leading dense layer bills a standard FFN instead of experts") {
    ModelConfig two = cfg;
    two.layers = 2;
    two.first_layer_dense = true;
    two.validate();
    const FlopsBreakdown f = flops_estimate(two, 16);
    // one MoE layer (26112) + one dense FFN layer (16*3*2*16*16 = 24576)
    CHECK(f.experts == 3.0 * (26112.0 + 24576.0));
  }

  CHECK_THROWS_AS(flops_estimate(cfg, 0), DomainError);
}
