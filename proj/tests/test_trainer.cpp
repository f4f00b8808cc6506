// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "moelab/model.hpp"
#include "moelab/trainer.hpp"
#include "test_util.hpp"

using namespace moelab;

TEST_CASE("lr schedule: linear warmup, stepped decay") {
  TrainConfig tc;
  tc.max_lr = 1.08e-3;
  tc.warmup_steps = 2000;
  tc.total_steps = 24000;
  tc.decay_points = {0.8, 0.9};
  tc.decay_factor = 0.316;
  tc.validate();

  CHECK(lr_schedule(0, tc) == 0.0);
  CHECK(lr_schedule(1, tc) == doctest::Approx(1.08e-3 / 2000.0).epsilon(1e-12));
  CHECK(lr_schedule(1000, tc) == doctest::Approx(5.4e-4).epsilon(1e-12));
  CHECK(lr_schedule(2000, tc) == doctest::Approx(1.08e-3).epsilon(1e-12));  // warmup ends at max
  CHECK(lr_schedule(10000, tc) == doctest::Approx(1.08e-3).epsilon(1e-12));
  // decay points sit at steps 19200 and 21600
  CHECK(lr_schedule(19199, tc) == doctest::Approx(1.08e-3).epsilon(1e-12));
  CHECK(lr_schedule(19200, tc) == doctest::Approx(1.08e-3 * 0.316).epsilon(1e-12));
  CHECK(lr_schedule(21000, tc) == doctest::Approx(3.4128e-4).epsilon(1e-12));
  CHECK(lr_schedule(21600, tc) == doctest::Approx(1.08e-3 * 0.316 * 0.316).epsilon(1e-12));
  CHECK(lr_schedule(23000, tc) == doctest::Approx(1.0784448e-4).epsilon(1e-12));
  CHECK(lr_schedule(24000, tc) == doctest::Approx(1.0784448e-4).epsilon(1e-12));
}

TEST_CASE("one-step warmup reaches max immediately") {
  TrainConfig tc;
  tc.max_lr = 0.01;
  tc.warmup_steps = 1;  // the shortest allowed ramp
  tc.total_steps = 10;
  tc.decay_points = {};
  tc.validate();
  CHECK(lr_schedule(1, tc) == 0.01);
  CHECK(lr_schedule(10, tc) == 0.01);
}

TEST_CASE("adamw hand-worked first step") {
  // w=1, g=1, lr=0.1, betas (0.9, 0.95), wd=0.1:
  // mhat=1, vhat=1 -> w = 0.99 - 0.1/(1+1e-8) ~ 0.89
  Tensor w = Tensor::from({1.0}, {1}, true);
  w.ensure_grad();
  w.grad()[0] = 1.0;
  std::vector<Tensor> params = {w};
  TrainConfig tc;
  tc.beta1 = 0.9;
  tc.beta2 = 0.95;
  tc.weight_decay = 0.1;
  tc.adam_eps = 1e-8;
  AdamW opt(params, tc);
  opt.step(0.1);
  CHECK(w.data()[0] == doctest::Approx(0.89).epsilon(1e-8));
  CHECK(opt.steps_taken() == 1);

  // second identical gradient keeps mhat = vhat = 1 -> same update rule
  w.grad()[0] = 1.0;
  opt.step(0.1);
  const double w2 = 0.89 * (1.0 - 0.1 * 0.1) - 0.1 * (1.0 / (1.0 + 1e-8));
  CHECK(w.data()[0] == doctest::Approx(w2).epsilon(1e-7));
}

TEST_CASE("adamw without weight decay reduces to adam") {
  Tensor w = Tensor::from({2.0}, {1}, true);
  w.ensure_grad();
  w.grad()[0] = 0.5;
  std::vector<Tensor> params = {w};
  TrainConfig tc;
  tc.weight_decay = 0.0;
  AdamW opt(params, tc);
  opt.step(0.01);
  // mhat = 0.5, vhat = 0.25 -> step = lr * 0.5 / (0.5 + eps)
  CHECK(w.data()[0] == doctest::Approx(2.0 - 0.01 * (0.5 / (0.5 + 1e-8))).epsilon(1e-12));
}

TEST_CASE("adamw requires gradients to exist") {
  Tensor w = Tensor::from({1.0}, {1}, false);
  std::vector<Tensor> params = {w};
  TrainConfig tc;
  CHECK_THROWS_AS(AdamW(params, tc), ContractError);
}

TEST_CASE("global gradient clipping") {
  Tensor a = Tensor::from({3.0}, {1}, true);
  Tensor b = Tensor::from({4.0}, {1}, true);
  a.ensure_grad();
  b.ensure_grad();
  a.grad()[0] = 3.0;
  b.grad()[0] = 4.0;  // global norm 5
  std::vector<Tensor> params = {a, b};
  const double factor = clip_grad_norm(params, 1.0);
  CHECK(factor == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(b.grad()[0] == doctest::Approx(0.8).epsilon(1e-12));
  // already inside the bound: untouched, factor 1
  CHECK(clip_grad_norm(params, 10.0) == 1.0);
  CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-12));
}

namespace {

TrainConfig quick_tc(int64_t steps) {
  TrainConfig tc;
  tc.max_lr = 3e-3;
  tc.warmup_steps = 4;
  tc.total_steps = steps;
  tc.batch_tokens = 64;
  tc.seed = 11;
  tc.log_interval = 5;
  tc.eval_fraction = 0.125;
  return tc;
}

}  // namespace

TEST_CASE("training runs are deterministic row for row") {
  const ModelConfig cfg = testutil::tiny_model();
  const TokenCorpus corpus = testutil::pattern_corpus(4096, cfg.vocab);
  const TrainConfig tc = quick_tc(12);

  ModelParams p1 = init_params(cfg, tc.seed);
  ModelParams p2 = init_params(cfg, tc.seed);
  const TrainResult r1 = train(cfg, p1, corpus, tc);
  const TrainResult r2 = train(cfg, p2, corpus, tc);
  CHECK(r1.metrics.to_csv() == r2.metrics.to_csv());
  CHECK(r1.final_lm_loss == r2.final_lm_loss);

  // trained weights identical too
  std::vector<Tensor> t1 = collect_params(cfg, p1);
  std::vector<Tensor> t2 = collect_params(cfg, p2);
  for (size_t i = 0; i < t1.size(); ++i)
    for (int64_t j = 0; j < t1[i].numel(); ++j) REQUIRE(t1[i].data()[j] == t2[i].data()[j]);
}

TEST_CASE("a short run reduces the language-model loss") {
  const ModelConfig cfg = testutil::tiny_model();
  const TokenCorpus corpus = testutil::pattern_corpus(4096, cfg.vocab);
  TrainConfig tc = quick_tc(40);
  ModelParams params = init_params(cfg, tc.seed);

  const double before = eval_lm_loss(cfg, params, corpus.train_split(tc.eval_fraction), 512);
  const TrainResult r = train(cfg, params, corpus, tc);
  const double after = eval_lm_loss(cfg, params, corpus.train_split(tc.eval_fraction), 512);
  CHECK(after < before - 0.3);
  CHECK(r.metrics.rows.size() >= 2);
  CHECK(r.metrics.rows.back().step == 40);
  CHECK(r.wall_ms >= 0);
}

TEST_CASE("metrics csv has the documented header and stable formatting") {
  RunMetrics m;
  MetricsRow row;
  row.step = 3;
  row.lm_loss = 1.5;
  row.expbal = 0.01;
  row.lr = 2.5e-4;
  m.rows.push_back(row);
  const std::string csv = m.to_csv();
  CHECK(csv.find("step,lm_loss,expbal,devbal,load_max_mean,load_cv,lr,wall_ms\n") == 0);
  CHECK(csv.find("3,1.5,0.01,0,0,0,0.00025,0") != std::string::npos);
}

TEST_CASE("wall time column stays zero unless explicitly recorded") {
  const ModelConfig cfg = testutil::tiny_model();
  const TokenCorpus corpus = testutil::pattern_corpus(2048, cfg.vocab);
  TrainConfig tc = quick_tc(6);
  ModelParams params = init_params(cfg, tc.seed);
  const TrainResult r = train(cfg, params, corpus, tc);
  for (const auto& row : r.metrics.rows) CHECK(row.wall_ms == 0);

  tc.record_wall_time = true;
  ModelParams params2 = init_params(cfg, tc.seed);
  const TrainResult r2 = train(cfg, params2, corpus, tc);
  CHECK(r2.metrics.rows.back().wall_ms >= 0);  // real timings, machine dependent
}

TEST_CASE("eval loss of an untrained uniform model is close to log vocab") {
  ModelConfig cfg = testutil::tiny_model();
  cfg.init_std = 1e-4;  // near-zero logits everywhere
  ModelParams params = init_params(cfg, 3);
  const TokenCorpus corpus = testutil::pattern_corpus(1024, cfg.vocab);
  const double loss = eval_lm_loss(cfg, params, corpus.eval_split(0.25), 256);
  CHECK(loss == doctest::Approx(std::log(static_cast<double>(cfg.vocab))).epsilon(0.01));
}

TEST_CASE("train validates corpus compatibility") {
  const ModelConfig cfg = testutil::tiny_model();  // vocab 32
  TokenCorpus corpus = testutil::pattern_corpus(512, 64);
  TrainConfig tc = quick_tc(2);
  ModelParams params = init_params(cfg, 1);
  CHECK_THROWS_AS(train(cfg, params, corpus, tc), ConfigError);
}

TEST_CASE("train config validation") {
  TrainConfig tc;
  tc.total_steps = -1;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.warmup_steps = 0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.decay_points = {1.5};
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.eval_fraction = 1.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
  tc = TrainConfig{};
  tc.grad_clip_norm = -1.0;
  CHECK_THROWS_AS(tc.validate(), ConfigError);
}

TEST_CASE("data splits partition the corpus") {
  const TokenCorpus corpus = testutil::pattern_corpus(1000, 32);
  const auto train_span = corpus.train_split(0.2);
  const auto eval_span = corpus.eval_split(0.2);
  CHECK(train_span.size() == 800);
  CHECK(eval_span.size() == 200);
  CHECK(train_span.data() + train_span.size() == eval_span.data());
  CHECK_THROWS_AS(corpus.train_split(1.0), ConfigError);
  CHECK_THROWS_AS(corpus.train_split(-0.1), ConfigError);
}
