#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xrhead/config.hpp"
#include "xrhead/encoders.hpp"
#include "xrhead/heads.hpp"
#include "xrhead/prompts.hpp"
#include "xrhead/una.hpp"

namespace xrhead {

/// The full adaptation model: frozen encoders, prompt bank (or fixed manual
/// prompt features), unified attention and a prediction head.
class XrModel {
 public:
  struct Output {
    Tensor logits;     // [B x W], raw head output
    Tensor attention;  // [B x N x (S+1)]
    Tensor parts;      // [B x S x E]
  };

  /// `manual` replaces the prompt bank when the config asks for manual prompts.
  XrModel(const TrainConfig& config, const Tensor& class_embeddings, std::size_t patch_dim,
          std::optional<PromptFeatures> manual = std::nullopt);

  /// Frozen image features of raw patches [B x N x D_in] -> [B x N x E].
  Tensor encode_images(const Tensor& patches) const;
  /// Prompt features for the current prompt parameters (or the manual features).
  PromptFeatures prompt_features() const;
  /// X are encoded image features [B x N x E].
  Output forward(const Tensor& X, bool training);
  Output forward(const Tensor& X, const PromptFeatures& prompts, bool training);
  /// Logits fed into the loss: cosine heads are multiplied by logit_scale.
  Tensor loss_logits(const Tensor& logits) const;

  /// Trainable parameters (prompt contexts, UnA, head). Names are unique.
  std::vector<Parameter> parameters() const;
  /// Checksum over encoders and class embeddings, which must never change.
  std::uint64_t frozen_checksum() const;

  const TrainConfig& config() const { return config_; }
  std::size_t classes() const { return classes_; }
  const FrozenImageEncoder& image_encoder() const { return image_encoder_; }
  const FrozenTextEncoder& text_encoder() const { return text_encoder_; }
  const PromptBank& bank() const { return bank_; }
  const std::optional<PromptFeatures>& manual_prompts() const { return manual_; }
  UnifiedAttention& una() { return una_; }
  PredictionHead& head() { return head_; }

  /// Writes config.json and model.bin (parameters + batch-norm statistics) into `dir`.
  void save(const std::string& dir) const;
  static XrModel load(const std::string& dir);

 private:
  template <class Self>
  static auto batch_norms_of(Self& self);

  TrainConfig config_;
  std::size_t classes_;
  FrozenImageEncoder image_encoder_;
  FrozenTextEncoder text_encoder_;
  PromptBank bank_;
  std::optional<PromptFeatures> manual_;
  UnifiedAttention una_;
  PredictionHead head_;
};

}  // namespace xrhead
