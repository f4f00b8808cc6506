// SPDX-License-Identifier: Apache-2.0
#include "moelab/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "moelab/errors.hpp"

namespace moelab {
namespace {

using nlohmann::json;

int line_of_byte(const std::string& text, size_t byte) {
  const size_t stop = std::min(byte, text.size());
  int line = 1;
  for (size_t i = 0; i < stop; ++i)
    if (text[i] == '\n') ++line;
  return line;
}

// nlohmann prefixes messages with "[json.exception.parse_error.101] ".
std::string strip_tag(const std::string& what) {
  if (!what.empty() && what.front() == '[') {
    const auto pos = what.find("] ");
    if (pos != std::string::npos) return what.substr(pos + 2);
  }
  return what;
}

[[noreturn]] void fail(const std::string& origin, const std::string& msg) {
  throw ConfigError(origin + ": " + msg);
}

std::string dotted(const std::string& path, const std::string& key) {
  return "\"" + (path.empty() ? key : path + "." + key) + "\"";
}

void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& path, const std::string& origin) {
  for (const auto& item : obj.items())
    if (!allowed.count(item.key())) fail(origin, "unknown key " + dotted(path, item.key()));
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void require_object(const json& v, const std::string& name, const std::string& origin) {
  if (!v.is_object()) fail(origin, "\"" + name + "\" must be an object");
}

// Each getter leaves `out` untouched when the key is absent, so defaults and
// preset values survive partial overrides.
void get_i64(const json& obj, const std::string& path, const char* key, int64_t& out,
             const std::string& origin) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_number_integer() && !v->is_number_unsigned())
    fail(origin, dotted(path, key) + " must be an integer");
  out = v->get<int64_t>();
}

void get_u64(const json& obj, const std::string& path, const char* key, uint64_t& out,
             const std::string& origin) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<int64_t>() >= 0))
    fail(origin, dotted(path, key) + " must be a non-negative integer");
  out = v->get<uint64_t>();
}

void get_f64(const json& obj, const std::string& path, const char* key, double& out,
             const std::string& origin) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_number()) fail(origin, dotted(path, key) + " must be a number");
  out = v->get<double>();
}

void get_bool(const json& obj, const std::string& path, const char* key, bool& out,
              const std::string& origin) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_boolean()) fail(origin, dotted(path, key) + " must be a boolean");
  out = v->get<bool>();
}

void get_str(const json& obj, const std::string& path, const char* key, std::string& out,
             const std::string& origin) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_string()) fail(origin, dotted(path, key) + " must be a string");
  out = v->get<std::string>();
}

void get_f64_list(const json& obj, const std::string& path, const char* key,
                  std::vector<double>& out, const std::string& origin) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_array()) fail(origin, dotted(path, key) + " must be an array of numbers");
  std::vector<double> vals;
  for (const auto& e : *v) {
    if (!e.is_number()) fail(origin, dotted(path, key) + " must be an array of numbers");
    vals.push_back(e.get<double>());
  }
  out = std::move(vals);
}

void get_i64_list(const json& obj, const std::string& path, const char* key,
                  std::vector<int64_t>& out, const std::string& origin) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_array()) fail(origin, dotted(path, key) + " must be an array of integers");
  std::vector<int64_t> vals;
  for (const auto& e : *v) {
    if (!e.is_number_integer() && !e.is_number_unsigned())
      fail(origin, dotted(path, key) + " must be an array of integers");
    vals.push_back(e.get<int64_t>());
  }
  out = std::move(vals);
}

void get_str_list(const json& obj, const std::string& path, const char* key,
                  std::vector<std::string>& out, const std::string& origin) {
  const json* v = find(obj, key);
  if (!v) return;
  if (!v->is_array()) fail(origin, dotted(path, key) + " must be an array of strings");
  std::vector<std::string> vals;
  for (const auto& e : *v) {
    if (!e.is_string()) fail(origin, dotted(path, key) + " must be an array of strings");
    vals.push_back(e.get<std::string>());
  }
  out = std::move(vals);
}

void parse_moe(const json& obj, MoEConfig& moe, const std::string& origin) {
  static const std::set<std::string> allowed = {
      "base_experts", "segmentation",  "base_topk", "shared_experts",
      "base_ffn_inner", "expert_inner", "size_ratio", "device_groups",
      "alpha1", "alpha2", "renormalize_gates", "activation"};
  const std::string path = "model.moe";
  require_object(obj, path, origin);
  require_keys(obj, allowed, path, origin);
  get_i64(obj, path, "base_experts", moe.base_experts, origin);
  get_i64(obj, path, "segmentation", moe.segmentation, origin);
  get_i64(obj, path, "base_topk", moe.base_topk, origin);
  get_i64(obj, path, "shared_experts", moe.shared_experts, origin);
  get_i64(obj, path, "base_ffn_inner", moe.base_ffn_inner, origin);
  get_i64(obj, path, "expert_inner", moe.expert_inner, origin);
  get_f64(obj, path, "size_ratio", moe.size_ratio, origin);
  get_i64(obj, path, "device_groups", moe.device_groups, origin);
  get_f64(obj, path, "alpha1", moe.alpha1, origin);
  get_f64(obj, path, "alpha2", moe.alpha2, origin);
  get_bool(obj, path, "renormalize_gates", moe.renormalize_gates, origin);
  if (const json* v = find(obj, "activation")) {
    if (!v->is_string()) fail(origin, dotted(path, "activation") + " must be a string");
    try {
      moe.activation = activation_from_string(v->get<std::string>());
    } catch (const Error& e) {
      fail(origin, dotted(path, "activation") + ": " + e.what());
    }
  }
}

void parse_model(const json& obj, ModelConfig& model, const std::string& origin) {
  static const std::set<std::string> allowed = {
      "preset", "layers", "hidden", "heads", "head_dim", "vocab", "seq_len",
      "first_layer_dense", "tie_embeddings", "init_std", "moe"};
  require_object(obj, "model", origin);
  require_keys(obj, allowed, "model", origin);
  if (const json* v = find(obj, "preset")) {
    if (!v->is_string()) fail(origin, "\"model.preset\" must be a string");
    try {
      model = preset(v->get<std::string>());
    } catch (const Error& e) {
      fail(origin, std::string("\"model.preset\": ") + e.what());
    }
  }
  get_i64(obj, "model", "layers", model.layers, origin);
  get_i64(obj, "model", "hidden", model.hidden, origin);
  get_i64(obj, "model", "heads", model.heads, origin);
  get_i64(obj, "model", "head_dim", model.head_dim, origin);
  get_i64(obj, "model", "vocab", model.vocab, origin);
  get_i64(obj, "model", "seq_len", model.seq_len, origin);
  get_bool(obj, "model", "first_layer_dense", model.first_layer_dense, origin);
  get_bool(obj, "model", "tie_embeddings", model.tie_embeddings, origin);
  get_f64(obj, "model", "init_std", model.init_std, origin);
  if (const json* v = find(obj, "moe")) parse_moe(*v, model.moe, origin);
  model.moe.hidden = model.hidden;  // single source of truth for the width
}

void parse_train(const json& obj, TrainConfig& train, const std::string& origin) {
  static const std::set<std::string> allowed = {
      "max_lr", "warmup_steps", "total_steps", "decay_points", "decay_factor",
      "batch_tokens", "beta1", "beta2", "weight_decay", "adam_eps",
      "grad_clip_norm", "seed", "log_interval", "eval_fraction",
      "record_wall_time", "balance_layer_mean"};
  const std::string path = "train";
  require_object(obj, path, origin);
  require_keys(obj, allowed, path, origin);
  get_f64(obj, path, "max_lr", train.max_lr, origin);
  get_i64(obj, path, "warmup_steps", train.warmup_steps, origin);
  get_i64(obj, path, "total_steps", train.total_steps, origin);
  get_f64_list(obj, path, "decay_points", train.decay_points, origin);
  get_f64(obj, path, "decay_factor", train.decay_factor, origin);
  get_i64(obj, path, "batch_tokens", train.batch_tokens, origin);
  get_f64(obj, path, "beta1", train.beta1, origin);
  get_f64(obj, path, "beta2", train.beta2, origin);
  get_f64(obj, path, "weight_decay", train.weight_decay, origin);
  get_f64(obj, path, "adam_eps", train.adam_eps, origin);
  get_f64(obj, path, "grad_clip_norm", train.grad_clip_norm, origin);
  get_u64(obj, path, "seed", train.seed, origin);
  get_i64(obj, path, "log_interval", train.log_interval, origin);
  get_f64(obj, path, "eval_fraction", train.eval_fraction, origin);
  get_bool(obj, path, "record_wall_time", train.record_wall_time, origin);
  get_bool(obj, path, "balance_layer_mean", train.balance_layer_mean, origin);
}

void parse_probes(const json& obj, ProbeOptions& probes, const std::string& origin) {
  static const std::set<std::string> allowed = {"ratios", "k_values", "variants",
                                                "eval_tokens", "ablate_steps"};
  const std::string path = "probes";
  require_object(obj, path, origin);
  require_keys(obj, allowed, path, origin);
  get_f64_list(obj, path, "ratios", probes.ratios, origin);
  get_i64_list(obj, path, "k_values", probes.k_values, origin);
  get_str_list(obj, path, "variants", probes.variants, origin);
  get_i64(obj, path, "eval_tokens", probes.eval_tokens, origin);
  get_i64(obj, path, "ablate_steps", probes.ablate_steps, origin);
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  train.validate();
  for (const double r : probes.ratios)
    if (!(r >= 0.0 && r < 1.0))
      throw ConfigError("probes.ratios entries must be in [0, 1)");
  for (const int64_t k : probes.k_values)
    if (k < 1) throw ConfigError("probes.k_values entries must be >= 1");
  if (probes.eval_tokens < 1) throw ConfigError("probes.eval_tokens must be >= 1");
  if (probes.ablate_steps < 1) throw ConfigError("probes.ablate_steps must be >= 1");
}

std::string RunConfig::echo() const {
  json j;
  j["schema_version"] = kConfigSchemaVersion;

  json m;
  m["layers"] = model.layers;
  m["hidden"] = model.hidden;
  m["heads"] = model.heads;
  m["head_dim"] = model.head_dim;
  m["vocab"] = model.vocab;
  m["seq_len"] = model.seq_len;
  m["first_layer_dense"] = model.first_layer_dense;
  m["tie_embeddings"] = model.tie_embeddings;
  m["init_std"] = model.init_std;
  json e;
  e["base_experts"] = model.moe.base_experts;
  e["segmentation"] = model.moe.segmentation;
  e["base_topk"] = model.moe.base_topk;
  e["shared_experts"] = model.moe.shared_experts;
  e["base_ffn_inner"] = model.moe.base_ffn_inner;
  e["expert_inner"] = model.moe.expert_inner;
  e["size_ratio"] = model.moe.size_ratio;
  e["device_groups"] = model.moe.device_groups;
  e["alpha1"] = model.moe.alpha1;
  e["alpha2"] = model.moe.alpha2;
  e["renormalize_gates"] = model.moe.renormalize_gates;
  e["activation"] = to_string(model.moe.activation);
  m["moe"] = std::move(e);
  j["model"] = std::move(m);

  json t;
  t["max_lr"] = train.max_lr;
  t["warmup_steps"] = train.warmup_steps;
  t["total_steps"] = train.total_steps;
  t["decay_points"] = train.decay_points;
  t["decay_factor"] = train.decay_factor;
  t["batch_tokens"] = train.batch_tokens;
  t["beta1"] = train.beta1;
  t["beta2"] = train.beta2;
  t["weight_decay"] = train.weight_decay;
  t["adam_eps"] = train.adam_eps;
  t["grad_clip_norm"] = train.grad_clip_norm;
  t["seed"] = train.seed;
  t["log_interval"] = train.log_interval;
  t["eval_fraction"] = train.eval_fraction;
  t["record_wall_time"] = train.record_wall_time;
  t["balance_layer_mean"] = train.balance_layer_mean;
  j["train"] = std::move(t);

  j["corpus"] = corpus;
  j["vocab_file"] = vocab_file;
  j["out"] = out;

  json p;
  p["ratios"] = probes.ratios;
  p["k_values"] = probes.k_values;
  p["variants"] = probes.variants;
  p["eval_tokens"] = probes.eval_tokens;
  p["ablate_steps"] = probes.ablate_steps;
  j["probes"] = std::move(p);

  return j.dump(2) + "\n";
}

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const size_t byte = e.byte > 0 ? static_cast<size_t>(e.byte - 1) : 0;
    throw ConfigError(origin + ":" + std::to_string(line_of_byte(text, byte)) + ": " +
                      strip_tag(e.what()));
  }
  if (!doc.is_object()) fail(origin, "top level must be an object");
  static const std::set<std::string> allowed = {"schema_version", "model", "train",
                                                "corpus", "vocab_file", "out", "probes"};
  require_keys(doc, allowed, "", origin);

  const json* sv = find(doc, "schema_version");
  if (!sv) fail(origin, "missing required key \"schema_version\"");
  if (!sv->is_number_integer() && !sv->is_number_unsigned())
    fail(origin, "\"schema_version\" must be an integer");
  if (sv->get<int64_t>() != kConfigSchemaVersion)
    fail(origin, "unsupported schema_version " + sv->dump() + " (this build reads version " +
                     std::to_string(kConfigSchemaVersion) + ")");

  RunConfig rc;
  const json* model = find(doc, "model");
  if (!model) fail(origin, "missing required key \"model\"");
  parse_model(*model, rc.model, origin);
  if (const json* v = find(doc, "train")) parse_train(*v, rc.train, origin);
  get_str(doc, "", "corpus", rc.corpus, origin);
  get_str(doc, "", "vocab_file", rc.vocab_file, origin);
  get_str(doc, "", "out", rc.out, origin);
  if (const json* v = find(doc, "probes")) parse_probes(*v, rc.probes, origin);
  rc.validate();
  return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str(), path);
}

}  // namespace moelab
