#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "xrhead/encoders.hpp"
#include "xrhead/optim.hpp"

namespace xrhead {

/// Per-class, per-part learnable contexts followed by a frozen class-name row:
/// the prompt for (class k, part s) is contexts[k, s, 0..M-1] ++ class_embeddings[k].
/// Nothing is shared between classes or parts.
struct PromptBank {
  Parameter contexts;       // [W x S x M x E_word]
  Tensor class_embeddings;  // [W x E_word], never trained
  std::size_t classes = 0;
  std::size_t parts = 0;
  std::size_t context_len = 0;
  std::size_t word_dim = 0;
};

/// Encoded prompt features T, [W x S x E].
struct PromptFeatures {
  Tensor T;

  std::size_t classes() const { return T.dim(0); }
  std::size_t parts() const { return T.dim(1); }
  std::size_t dim() const { return T.dim(2); }
};

/// Contexts ~ N(0, 0.02^2) from `seed`. `class_embeddings` must be [W x E_word].
PromptBank init_bank(std::size_t classes, std::size_t parts, std::size_t context_len,
                     std::size_t word_dim, std::uint64_t seed, const Tensor& class_embeddings);

/// The S prompt sequences of class k, each [(M+1) x E_word]; differentiable in the contexts.
std::vector<Tensor> sequences_for(const PromptBank& bank, std::size_t k);

/// All W*S sequences stacked class-major: [W*S x (M+1) x E_word].
Tensor assemble_sequences(const PromptBank& bank);

PromptFeatures encode_bank(const PromptBank& bank, const FrozenTextEncoder& encoder);

/// Wraps externally supplied features (manual prompts); checks rank 3.
PromptFeatures prompt_features_from(const Tensor& features);

/// Fixed N(0,1) features, the stand-in for hand-written prompts encoded offline.
PromptFeatures random_prompt_features(std::size_t classes, std::size_t parts, std::size_t dim,
                                      std::uint64_t seed);

}  // namespace xrhead
