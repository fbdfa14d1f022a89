#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "xrhead/data.hpp"
#include "xrhead/heads.hpp"

namespace xrhead {

/// Everything a training run depends on. JSON config keys are exactly these
/// field names; unknown keys are rejected.
struct TrainConfig {
  std::string head_kind = "CRM_FULL";
  std::size_t S = 4;          // parts (prompts per class and visual part features)
  std::size_t M = 16;         // learnable context vectors per prompt
  double tau = 64.0;
  std::size_t E = 64;         // feature width
  std::size_t E_word = 32;    // word-embedding width
  int epochs = 100;
  double lr0 = 2e-3;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t shots = 16;
  std::uint64_t data_seed = 0;     // dataset generation and few-shot sampling
  std::uint64_t model_seed = 0;    // initialization and batch order
  std::uint64_t encoder_seed = 7;  // frozen encoder weights
  SyntheticSpec dataset_spec;      // used when dataset_file is empty; its seed is replaced by data_seed
  std::string dataset_file;
  std::string prompt_mode = "learned";  // "learned" | "manual"
  std::string prompt_file;              // [W x S x E] feature file, manual mode only
  bool eq6_squared_denominator = false;
  bool normalize_prompts_in_relation = false;
  double logit_scale = 100.0;  // multiplies cosine logits (ALIGN, PWCS) inside the loss
  std::size_t crm_hidden = 512;
  std::size_t shared_hidden = 0;
  std::size_t mlp_hidden = 512;

  HeadKind kind() const { return parse_head_kind(head_kind); }
  bool manual_prompts() const { return prompt_mode == "manual"; }
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

TrainConfig load_config(const std::string& path);

/// Applies XRHEAD_SEED (if set) to data_seed and model_seed.
void apply_seed_env(TrainConfig& config);

}  // namespace xrhead
