// SPDX-License-Identifier: Apache-2.0
//
// moelab command line: train, analyze (routing probes, architecture ablation),
// report (parameter/flop/combination accounting).
//
// Exit codes: 0 success, 2 configuration problem, 3 numeric failure.
#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moelab/analysis.hpp"
#include "moelab/checkpoint.hpp"
#include "moelab/config.hpp"
#include "moelab/data.hpp"
#include "moelab/errors.hpp"
#include "moelab/model.hpp"
#include "moelab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace moelab;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("write failed: " + path.string());
}

TokenCorpus load_corpus(const RunConfig& rc) {
  if (rc.corpus.empty())
    throw ConfigError("no corpus: set \"corpus\" in the config");
  return rc.vocab_file.empty() ? TokenCorpus::from_bytes(rc.corpus)
                               : TokenCorpus::from_words(rc.corpus, rc.vocab_file);
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::string out;
  int64_t seed = -1;  // -1 = keep the config's seed
  bool force = false;
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = RunConfig::from_file(a.config);
  if (!a.out.empty()) rc.out = a.out;
  if (a.seed >= 0) rc.train.seed = static_cast<uint64_t>(a.seed);
  if (rc.out.empty())
    throw ConfigError("no output directory: set \"out\" in the config or pass --out");

  const fs::path out_dir(rc.out);
  if (fs::exists(out_dir) && !a.force)
    throw ConfigError("output directory exists: " + out_dir.string() +
                      " (pass --force to overwrite)");
  fs::create_directories(out_dir);

  const TokenCorpus corpus = load_corpus(rc);
  ModelParams params = init_params(rc.model, rc.train.seed);
  const TrainResult result = train(rc.model, params, corpus, rc.train);

  const std::string config_echo = rc.echo();
  result.metrics.write_csv((out_dir / "metrics.csv").string());
  save_checkpoint((out_dir / "checkpoint.bin").string(), config_echo, rc.model, params);

  const ModelParamCounts counts = count_params(rc.model);
  json summary;
  summary["schema_version"] = kConfigSchemaVersion;
  summary["steps"] = rc.train.total_steps;
  summary["final_lm_loss"] = result.final_lm_loss;
  summary["final_load_cv"] = result.final_load_cv;
  summary["final_load_max_mean"] = result.final_load_max_mean;
  summary["wall_ms"] = result.wall_ms;
  summary["params_total"] = counts.total;
  summary["params_activated"] = counts.activated;
  summary["config"] = json::parse(config_echo);
  write_text(out_dir / "summary.json", summary.dump(2) + "\n");

  std::printf("trained %" PRId64 " steps: lm_loss %.6g, load_cv %.6g, load_max/mean %.6g\n",
              rc.train.total_steps, result.final_lm_loss, result.final_load_cv,
              result.final_load_max_mean);
  std::printf("wrote %s/{checkpoint.bin,metrics.csv,summary.json}\n", out_dir.string().c_str());
  return 0;
}

// --- analyze -------------------------------------------------------------

struct AnalyzeArgs {
  std::string checkpoint;
  std::string config;  // ablate trains from scratch and takes a config instead
  std::string corpus_override;
  std::string out;
  std::vector<double> ratios;
  std::vector<int64_t> k_values;
  std::vector<std::string> variants;
  int64_t eval_tokens = 0;  // 0 = config value
  int64_t steps = 0;        // ablate only; 0 = config value
};

struct LoadedRun {
  RunConfig rc;
  ModelParams params;
};

LoadedRun load_run(const AnalyzeArgs& a) {
  if (a.checkpoint.empty()) throw ConfigError("missing --checkpoint");
  LoadedCheckpoint ck = load_checkpoint(a.checkpoint, [](const std::string& text) {
    return RunConfig::from_json_text(text, "checkpoint config").model;
  });
  LoadedRun run{RunConfig::from_json_text(ck.config_json, "checkpoint config"),
                std::move(ck.params)};
  if (!a.corpus_override.empty()) run.rc.corpus = a.corpus_override;
  return run;
}

void emit_report(const ProbeReport& report, const std::string& config_echo,
                 const std::string& out_dir, const std::string& stem) {
  const std::string text = report.to_json(config_echo);
  if (out_dir.empty()) {
    std::fputs(text.c_str(), stdout);
    return;
  }
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / (stem + ".json"), text);
  write_text(fs::path(out_dir) / (stem + ".tsv"), report.to_plot_data());
  std::printf("wrote %s/%s.{json,tsv}\n", out_dir.c_str(), stem.c_str());
}

int cmd_probe(const AnalyzeArgs& a, const std::string& which) {
  LoadedRun run = load_run(a);
  const TokenCorpus corpus = load_corpus(run.rc);
  const auto eval = corpus.eval_split(run.rc.train.eval_fraction);
  const int64_t max_tokens = a.eval_tokens > 0 ? a.eval_tokens : run.rc.probes.eval_tokens;

  ProbeReport report;
  if (which == "disable-top") {
    const auto& ratios = a.ratios.empty() ? run.rc.probes.ratios : a.ratios;
    report = probe_disable_top(run.rc.model, run.params, eval, max_tokens, ratios);
  } else if (which == "disable-shared") {
    report = probe_disable_shared(run.rc.model, run.params, eval, max_tokens);
  } else {
    const auto& ks = a.k_values.empty() ? run.rc.probes.k_values : a.k_values;
    report = probe_vary_activated(run.rc.model, run.params, eval, max_tokens, ks);
  }
  emit_report(report, run.rc.echo(), a.out, report.probe);
  return 0;
}

int cmd_ablate(const AnalyzeArgs& a) {
  if (a.config.empty()) throw ConfigError("missing --config");
  RunConfig rc = RunConfig::from_file(a.config);
  if (!a.corpus_override.empty()) rc.corpus = a.corpus_override;
  const TokenCorpus corpus = load_corpus(rc);

  TrainConfig tc = rc.train;
  tc.total_steps = a.steps > 0 ? a.steps : rc.probes.ablate_steps;
  tc.warmup_steps = std::min(tc.warmup_steps, std::max<int64_t>(1, tc.total_steps / 10));
  const auto& variants = a.variants.empty() ? rc.probes.variants : a.variants;
  const int64_t max_tokens = a.eval_tokens > 0 ? a.eval_tokens : rc.probes.eval_tokens;

  const std::vector<AblationRow> rows = ablation_matrix(rc.model, corpus, tc, variants, max_tokens);

  json doc;
  doc["schema_version"] = kConfigSchemaVersion;
  doc["probe"] = "ablation";
  doc["steps"] = tc.total_steps;
  doc["rows"] = json::array();
  std::string tsv = "# variant\teval_loss\texpert_params\tactivated_params\n";
  std::printf("%-18s %12s %14s %14s\n", "variant", "eval_loss", "expert_params", "activated");
  for (const AblationRow& r : rows) {
    json row;
    row["variant"] = r.variant;
    row["expert_total"] = r.expert_total;
    row["expert_activated"] = r.expert_activated;
    row["total"] = r.total;
    row["activated"] = r.activated;
    row["eval_loss"] = r.eval_loss;
    doc["rows"].push_back(std::move(row));
    char line[256];
    std::snprintf(line, sizeof(line), "%s\t%.12g\t%" PRId64 "\t%" PRId64 "\n", r.variant.c_str(),
                  r.eval_loss, r.expert_total, r.activated);
    tsv += line;
    std::printf("%-18s %12.6f %14" PRId64 " %14" PRId64 "\n", r.variant.c_str(), r.eval_loss,
                r.expert_total, r.activated);
  }
  doc["config"] = json::parse(rc.echo());
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "ablation.json", doc.dump(2) + "\n");
    write_text(fs::path(a.out) / "ablation.tsv", tsv);
    std::printf("wrote %s/ablation.{json,tsv}\n", a.out.c_str());
  }
  return 0;
}

// --- report --------------------------------------------------------------

struct ReportArgs {
  std::string config;
  std::string out;
  int64_t tokens = 0;  // flops only; 0 = one full sequence
};

int cmd_report_params(const ReportArgs& a) {
  const RunConfig rc = RunConfig::from_file(a.config);
  const ModelParamCounts c = count_params(rc.model);
  const MoEConfig& moe = rc.model.moe;

  std::printf("parameters\n");
  std::printf("  embedding tables   %14" PRId64 "\n", c.embedding);
  std::printf("  attention          %14" PRId64 "\n", c.attention);
  std::printf("  layer norms        %14" PRId64 "\n", c.layer_norm);
  std::printf("  routers            %14" PRId64 "\n", c.router);
  std::printf("  experts (all)      %14" PRId64 "\n", c.expert_total);
  std::printf("  experts (active)   %14" PRId64 "\n", c.expert_activated);
  if (c.dense_ffn > 0) std::printf("  dense ffn          %14" PRId64 "\n", c.dense_ffn);
  std::printf("  output head        %14" PRId64 "\n", c.head);
  std::printf("  total              %14" PRId64 "\n", c.total);
  std::printf("  activated / token  %14" PRId64 "\n", c.activated);
  const MoEParamCounts layer = count_params(moe);
  if (layer.standard_ffn > 0) {
    std::printf("per-layer expert budget vs one standard ffn: %.4gx total, %.4gx active\n",
                static_cast<double>(layer.expert_total) / static_cast<double>(layer.standard_ffn),
                static_cast<double>(layer.expert_activated) /
                    static_cast<double>(layer.standard_ffn));
  }

  if (!a.out.empty()) {
    json doc;
    doc["schema_version"] = kConfigSchemaVersion;
    doc["embedding"] = c.embedding;
    doc["attention"] = c.attention;
    doc["layer_norm"] = c.layer_norm;
    doc["router"] = c.router;
    doc["expert_total"] = c.expert_total;
    doc["expert_activated"] = c.expert_activated;
    doc["dense_ffn"] = c.dense_ffn;
    doc["head"] = c.head;
    doc["total"] = c.total;
    doc["activated"] = c.activated;
    doc["config"] = json::parse(rc.echo());
    write_text(a.out, doc.dump(2) + "\n");
  }
  return 0;
}

int cmd_report_flops(const ReportArgs& a) {
  const RunConfig rc = RunConfig::from_file(a.config);
  const int64_t tokens = a.tokens > 0 ? a.tokens : rc.model.seq_len;
  const FlopsBreakdown f = flops_estimate(rc.model, tokens);

  std::printf("flops for %" PRId64 " tokens (forward + backward)\n", tokens);
  std::printf("  attention linear    %14.6g\n", f.attention_linear);
  std::printf("  attention quadratic %14.6g\n", f.attention_quadratic);
  std::printf("  experts + routing   %14.6g\n", f.experts);
  std::printf("  output head         %14.6g\n", f.head);
  std::printf("  embedding lookup    %14.6g\n", f.embedding);
  std::printf("  total               %14.6g\n", f.total);

  if (!a.out.empty()) {
    json doc;
    doc["schema_version"] = kConfigSchemaVersion;
    doc["tokens"] = tokens;
    doc["attention_linear"] = f.attention_linear;
    doc["attention_quadratic"] = f.attention_quadratic;
    doc["experts"] = f.experts;
    doc["head"] = f.head;
    doc["embedding"] = f.embedding;
    doc["total"] = f.total;
    doc["config"] = json::parse(rc.echo());
    write_text(a.out, doc.dump(2) + "\n");
  }
  return 0;
}

int cmd_report_combinations(const ReportArgs& a) {
  const RunConfig rc = RunConfig::from_file(a.config);
  const MoEConfig& moe = rc.model.moe;

  // The same activated budget, counted three ways: plain top-K over base
  // experts, fine-grained segmentation, and segmentation with K_s experts
  // pinned as shared (routing then chooses K_r of N_r).
  const BigUint base = routing_combinations(moe.base_experts, moe.base_topk);
  const BigUint fine = routing_combinations(moe.total_fine(), moe.active_total());
  const BigUint routed = routing_combinations(moe.routed(), moe.active_routed());

  std::printf("per-token expert combinations\n");
  std::printf("  top-%" PRId64 " of %" PRId64 " base experts:        %s\n", moe.base_topk,
              moe.base_experts, base.str_grouped().c_str());
  std::printf("  split %" PRId64 "x, top-%" PRId64 " of %" PRId64 ":           %s\n",
              moe.segmentation, moe.active_total(), moe.total_fine(),
              fine.str_grouped().c_str());
  std::printf("  with %" PRId64 " shared, top-%" PRId64 " of %" PRId64 ":      %s\n",
              moe.shared_experts, moe.active_routed(), moe.routed(),
              routed.str_grouped().c_str());

  if (!a.out.empty()) {
    json doc;
    doc["schema_version"] = kConfigSchemaVersion;
    doc["base"] = base.str();
    doc["fine_grained"] = fine.str();
    doc["fine_grained_shared"] = routed.str();
    doc["config"] = json::parse(rc.echo());
    write_text(a.out, doc.dump(2) + "\n");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moelab: a mixture-of-experts language-model laboratory"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model and write a run directory");
  train_cmd->add_option("--config", train_args.config, "run configuration (JSON)")->required();
  train_cmd->add_option("--out", train_args.out, "output directory (overrides config)");
  train_cmd->add_option("--seed", train_args.seed, "training seed (overrides config)");
  train_cmd->add_flag("--force", train_args.force, "overwrite an existing output directory");

  AnalyzeArgs an;
  CLI::App* analyze_cmd = app.add_subcommand("analyze", "probe a trained checkpoint");
  analyze_cmd->require_subcommand(1);
  std::vector<CLI::App*> probe_cmds;
  for (const char* name : {"disable-top", "disable-shared", "vary-k"}) {
    CLI::App* c = analyze_cmd->add_subcommand(name, "");
    c->add_option("--checkpoint", an.checkpoint, "checkpoint.bin from a training run")
        ->required();
    c->add_option("--corpus", an.corpus_override, "override the corpus path");
    c->add_option("--out", an.out, "directory for .json/.tsv output (default: stdout)");
    c->add_option("--eval-tokens", an.eval_tokens, "evaluation token budget");
    probe_cmds.push_back(c);
  }
  probe_cmds[0]->add_option("--ratios", an.ratios, "fractions of top experts to disable");
  probe_cmds[2]->add_option("--k", an.k_values, "routed-expert counts to sweep");
  probe_cmds[0]->description("mask the strongest experts per token and re-evaluate");
  probe_cmds[1]->description("drop the shared experts, widening routing to compensate");
  probe_cmds[2]->description("re-evaluate with different routed-expert counts");

  CLI::App* ablate_cmd =
      analyze_cmd->add_subcommand("ablate", "train architecture variants at equal expert budget");
  ablate_cmd->add_option("--config", an.config, "run configuration (JSON)")->required();
  ablate_cmd->add_option("--corpus", an.corpus_override, "override the corpus path");
  ablate_cmd->add_option("--out", an.out, "directory for ablation.{json,tsv}");
  ablate_cmd->add_option("--variants", an.variants, "subset of variants to train");
  ablate_cmd->add_option("--steps", an.steps, "training steps per variant");
  ablate_cmd->add_option("--eval-tokens", an.eval_tokens, "evaluation token budget");

  ReportArgs rep;
  CLI::App* report_cmd = app.add_subcommand("report", "static accounting from a config");
  report_cmd->require_subcommand(1);
  CLI::App* params_cmd = report_cmd->add_subcommand("params", "parameter counts");
  CLI::App* flops_cmd = report_cmd->add_subcommand("flops", "training flops estimate");
  CLI::App* comb_cmd = report_cmd->add_subcommand("combinations", "routing combination counts");
  for (CLI::App* c : {params_cmd, flops_cmd, comb_cmd}) {
    c->add_option("--config", rep.config, "run configuration (JSON)")->required();
    c->add_option("--out", rep.out, "write a JSON report here as well");
  }
  flops_cmd->add_option("--tokens", rep.tokens, "token count (default: one sequence)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_args);
    if (*analyze_cmd) {
      if (*probe_cmds[0]) return cmd_probe(an, "disable-top");
      if (*probe_cmds[1]) return cmd_probe(an, "disable-shared");
      if (*probe_cmds[2]) return cmd_probe(an, "vary-k");
      if (*ablate_cmd) return cmd_ablate(an);
    }
    if (*report_cmd) {
      if (*params_cmd) return cmd_report_params(rep);
      if (*flops_cmd) return cmd_report_flops(rep);
      if (*comb_cmd) return cmd_report_combinations(rep);
    }
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const RoutingError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
