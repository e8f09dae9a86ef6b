#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcrec/eval.hpp"
#include "dcrec/trainer.hpp"

namespace dcrec {

// Every tunable of the pipeline as a named key. Defaults reproduce the full
// model; ablations change exactly one documented flag.
struct ExperimentConfig {
  // data
  int max_len = 50;
  int min_len = 5;
  // model
  int num_blocks = 4;
  int dim = 128;
  double attn_dropout = 0.1;
  double embed_dropout = 0.4;
  // diffusion
  int total_steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  bool beta_rescale = true;
  // optimization
  int batch_size = 512;
  double lr = 4e-3;
  int max_epochs = 200;
  int patience = 5;
  double grad_clip = 1.0;
  double tau = 0.07;
  std::string lambda_kind = "fix";
  double lambda_c = 0.1;
  double lambda_max = 0.2;
  double lambda_min = 0.003;
  // ablation switches
  std::vector<std::string> loss_mask = {"L_T", "L_t", "L_z"};
  std::string variant = "dcrec";
  // inference and evaluation
  double delta = 0.1;
  std::vector<int> eval_ks = {5, 10};
  int eval_num_steps = 50;
  int eval_max_users = 0;
  int val_num_steps = 5;
  int val_max_users = 1024;
  std::uint64_t seed = 0;
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<void(ExperimentConfig&, const nlohmann::json&)> set;
  std::function<nlohmann::json(const ExperimentConfig&)> get;
};

template <class T>
ConfigField config_field(const char* key, T ExperimentConfig::*member) {
  return {key,
          [member](ExperimentConfig& c, const nlohmann::json& v) { c.*member = v.get<T>(); },
          [member](const ExperimentConfig& c) { return nlohmann::json(c.*member); }};
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      config_field("max_len", &ExperimentConfig::max_len),
      config_field("min_len", &ExperimentConfig::min_len),
      config_field("num_blocks", &ExperimentConfig::num_blocks),
      config_field("dim", &ExperimentConfig::dim),
      config_field("attn_dropout", &ExperimentConfig::attn_dropout),
      config_field("embed_dropout", &ExperimentConfig::embed_dropout),
      config_field("total_steps", &ExperimentConfig::total_steps),
      config_field("beta_min", &ExperimentConfig::beta_min),
      config_field("beta_max", &ExperimentConfig::beta_max),
      config_field("beta_rescale", &ExperimentConfig::beta_rescale),
      config_field("batch_size", &ExperimentConfig::batch_size),
      config_field("lr", &ExperimentConfig::lr),
      config_field("max_epochs", &ExperimentConfig::max_epochs),
      config_field("patience", &ExperimentConfig::patience),
      config_field("grad_clip", &ExperimentConfig::grad_clip),
      config_field("tau", &ExperimentConfig::tau),
      config_field("lambda_kind", &ExperimentConfig::lambda_kind),
      config_field("lambda_c", &ExperimentConfig::lambda_c),
      config_field("lambda_max", &ExperimentConfig::lambda_max),
      config_field("lambda_min", &ExperimentConfig::lambda_min),
      config_field("loss_mask", &ExperimentConfig::loss_mask),
      config_field("variant", &ExperimentConfig::variant),
      config_field("delta", &ExperimentConfig::delta),
      config_field("eval_ks", &ExperimentConfig::eval_ks),
      config_field("eval_num_steps", &ExperimentConfig::eval_num_steps),
      config_field("eval_max_users", &ExperimentConfig::eval_max_users),
      config_field("val_num_steps", &ExperimentConfig::val_num_steps),
      config_field("val_max_users", &ExperimentConfig::val_max_users),
      config_field("seed", &ExperimentConfig::seed),
  };
  return fields;
}

}  // namespace detail

// Loss term names map one-to-one onto mask bits. Rejects unknown names,
// duplicates, and the empty set (the objective needs at least one term).
inline LossMask parse_loss_mask(const std::vector<std::string>& names) {
  LossMask mask;
  mask.l_T = mask.l_t = mask.l_z = false;
  for (const std::string& name : names) {
    bool* bit = nullptr;
    if (name == "L_T") bit = &mask.l_T;
    else if (name == "L_t") bit = &mask.l_t;
    else if (name == "L_z") bit = &mask.l_z;
    else throw std::invalid_argument("loss_mask: unknown term " + name);
    if (*bit) throw std::invalid_argument("loss_mask: duplicate term " + name);
    *bit = true;
  }
  if (!mask.l_T && !mask.l_t && !mask.l_z)
    throw std::invalid_argument("loss_mask: at least one term required");
  return mask;
}

inline std::vector<std::string> loss_mask_names(const LossMask& mask) {
  std::vector<std::string> names;
  if (mask.l_T) names.push_back("L_T");
  if (mask.l_t) names.push_back("L_t");
  if (mask.l_z) names.push_back("L_z");
  return names;
}

// Cheap structural checks that do not require data. Throws invalid_argument
// naming the offending key. Schedule bounds and dataset constraints are
// validated by the modules that consume them.
inline void validate_config(const ExperimentConfig& c) {
  auto positive = [](long long v, const char* key) {
    if (v <= 0) throw std::invalid_argument(std::string("config: ") + key + " must be positive");
  };
  positive(c.max_len, "max_len");
  positive(c.min_len, "min_len");
  positive(c.num_blocks, "num_blocks");
  positive(c.dim, "dim");
  positive(c.total_steps, "total_steps");
  positive(c.batch_size, "batch_size");
  positive(c.max_epochs, "max_epochs");
  positive(c.patience, "patience");
  positive(c.eval_num_steps, "eval_num_steps");
  positive(c.val_num_steps, "val_num_steps");
  if (c.lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
  if (c.tau <= 0.0) throw std::invalid_argument("config: tau must be positive");
  if (c.attn_dropout < 0.0 || c.attn_dropout >= 1.0)
    throw std::invalid_argument("config: attn_dropout must lie in [0, 1)");
  if (c.embed_dropout < 0.0 || c.embed_dropout >= 1.0)
    throw std::invalid_argument("config: embed_dropout must lie in [0, 1)");
  if (c.eval_num_steps > c.total_steps)
    throw std::invalid_argument("config: eval_num_steps cannot exceed total_steps");
  if (c.eval_ks.empty()) throw std::invalid_argument("config: eval_ks must be non-empty");
  for (int k : c.eval_ks)
    if (k <= 0) throw std::invalid_argument("config: eval_ks entries must be positive");
  lambda_kind(c.lambda_kind);
  variant_flags(c.variant);
  parse_loss_mask(c.loss_mask);
}

// Strict parse: every key must name a known field. Unknown keys are collected
// and reported together so a typo-ridden config fails with one message.
inline ExperimentConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be a JSON object");
  ExperimentConfig c;
  std::vector<std::string> unknown;
  for (const auto& [key, value] : j.items()) {
    const detail::ConfigField* match = nullptr;
    for (const auto& f : detail::config_fields())
      if (f.key == key) {
        match = &f;
        break;
      }
    if (!match) {
      unknown.push_back(key);
      continue;
    }
    try {
      match->set(c, value);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: bad value for key " + key + ": " + e.what());
    }
  }
  if (!unknown.empty()) {
    std::string msg = "config: unknown keys:";
    for (const std::string& k : unknown) msg += " " + k;
    throw std::invalid_argument(msg);
  }
  validate_config(c);
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return parse_config(j);
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  for (const auto& f : detail::config_fields()) j[f.key] = f.get(c);
  return j;
}

// CI override hook: DCREC_<UPPERCASE_KEY> replaces the matching field. Values
// are parsed as JSON where possible (numbers, bools, arrays); anything that
// fails to parse is taken as a bare string, so DCREC_VARIANT=icdm works.
inline void apply_env_overrides(ExperimentConfig& c, const std::string& prefix = "DCREC_") {
  for (const auto& f : detail::config_fields()) {
    std::string name = prefix;
    for (char ch : f.key) name += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    const char* raw = std::getenv(name.c_str());
    if (!raw) continue;
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = std::string(raw);
    }
    try {
      f.set(c, value);
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: bad value in " + name + ": " + e.what());
    }
  }
  validate_config(c);
}

inline TrainSettings to_train_settings(const ExperimentConfig& c) {
  TrainSettings s;
  s.num_blocks = c.num_blocks;
  s.dim = c.dim;
  s.attn_dropout = c.attn_dropout;
  s.embed_dropout = c.embed_dropout;
  s.total_steps = c.total_steps;
  s.beta_min = c.beta_min;
  s.beta_max = c.beta_max;
  s.beta_rescale = c.beta_rescale;
  s.batch_size = c.batch_size;
  s.lr = c.lr;
  s.max_epochs = c.max_epochs;
  s.patience = c.patience;
  s.grad_clip = c.grad_clip;
  s.tau = c.tau;
  s.lambda_schedule.kind = lambda_kind(c.lambda_kind);
  s.lambda_schedule.c = c.lambda_c;
  s.lambda_schedule.max = c.lambda_max;
  s.lambda_schedule.min = c.lambda_min;
  s.loss_mask = parse_loss_mask(c.loss_mask);
  s.variant = c.variant;
  s.seed = c.seed;
  s.delta = c.delta;
  s.val_num_steps = c.val_num_steps;
  s.val_max_users = c.val_max_users;
  return s;
}

// Test-time evaluation uses a noise stream independent of training and
// validation, derived from the experiment seed so runs stay reproducible.
inline EvalConfig to_eval_config(const ExperimentConfig& c) {
  EvalConfig e;
  e.ks = c.eval_ks;
  e.num_steps = c.eval_num_steps;
  e.delta = c.delta;
  e.seed = derive_seed(c.seed, 400);
  e.max_users = c.eval_max_users;
  return e;
}

}  // namespace dcrec
