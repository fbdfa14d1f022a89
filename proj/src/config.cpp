#include "xrhead/config.hpp"

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>

#include "xrhead/errors.hpp"

namespace xrhead {

void TrainConfig::validate() const {
  (void)kind();
  if (S == 0 || M == 0 || E == 0 || E_word == 0) throw ConfigError("S, M, E and E_word must be positive");
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (!(lr0 >= 0.0) || !(weight_decay >= 0.0)) throw ConfigError("lr0 and weight_decay must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2 (batch-norm)");
  if (shots == 0) throw ConfigError("shots must be positive");
  if (prompt_mode != "learned" && prompt_mode != "manual") {
    throw ConfigError("prompt_mode must be \"learned\" or \"manual\", got \"" + prompt_mode + "\"");
  }
  if (manual_prompts() && prompt_file.empty()) throw ConfigError("manual prompt mode requires prompt_file");
  if (crm_hidden == 0 || mlp_hidden == 0) throw ConfigError("hidden widths must be positive");
  if (!(logit_scale > 0.0)) throw ConfigError("logit_scale must be positive");
  if (dataset_file.empty()) dataset_spec.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"head_kind", c.head_kind},
                     {"S", c.S},
                     {"M", c.M},
                     {"tau", c.tau},
                     {"E", c.E},
                     {"E_word", c.E_word},
                     {"epochs", c.epochs},
                     {"lr0", c.lr0},
                     {"weight_decay", c.weight_decay},
                     {"momentum", c.momentum},
                     {"batch_size", c.batch_size},
                     {"shots", c.shots},
                     {"data_seed", c.data_seed},
                     {"model_seed", c.model_seed},
                     {"encoder_seed", c.encoder_seed},
                     {"dataset_spec", c.dataset_spec},
                     {"dataset_file", c.dataset_file},
                     {"prompt_mode", c.prompt_mode},
                     {"prompt_file", c.prompt_file},
                     {"eq6_squared_denominator", c.eq6_squared_denominator},
                     {"normalize_prompts_in_relation", c.normalize_prompts_in_relation},
                     {"logit_scale", c.logit_scale},
                     {"crm_hidden", c.crm_hidden},
                     {"shared_hidden", c.shared_hidden},
                     {"mlp_hidden", c.mlp_hidden}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const nlohmann::json defaults = TrainConfig{};
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    auto get = [&j](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("head_kind", c.head_kind);
    get("S", c.S);
    get("M", c.M);
    get("tau", c.tau);
    get("E", c.E);
    get("E_word", c.E_word);
    get("epochs", c.epochs);
    get("lr0", c.lr0);
    get("weight_decay", c.weight_decay);
    get("momentum", c.momentum);
    get("batch_size", c.batch_size);
    get("shots", c.shots);
    get("data_seed", c.data_seed);
    get("model_seed", c.model_seed);
    get("encoder_seed", c.encoder_seed);
    get("dataset_spec", c.dataset_spec);
    get("dataset_file", c.dataset_file);
    get("prompt_mode", c.prompt_mode);
    get("prompt_file", c.prompt_file);
    get("eq6_squared_denominator", c.eq6_squared_denominator);
    get("normalize_prompts_in_relation", c.normalize_prompts_in_relation);
    get("logit_scale", c.logit_scale);
    get("crm_hidden", c.crm_hidden);
    get("shared_hidden", c.shared_hidden);
    get("mlp_hidden", c.mlp_hidden);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return j.get<TrainConfig>();
}

void apply_seed_env(TrainConfig& config) {
  const char* env = std::getenv("XRHEAD_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') throw ConfigError("XRHEAD_SEED must be an unsigned integer");
  config.data_seed = v;
  config.model_seed = v;
}

}  // namespace xrhead
