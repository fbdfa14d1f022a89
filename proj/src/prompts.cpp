#include "xrhead/prompts.hpp"

#include <random>

#include "xrhead/errors.hpp"
#include "xrhead/layers.hpp"
#include "xrhead/ops.hpp"

namespace xrhead {

PromptBank init_bank(std::size_t classes, std::size_t parts, std::size_t context_len,
                     std::size_t word_dim, std::uint64_t seed, const Tensor& class_embeddings) {
  if (classes == 0 || parts == 0 || context_len == 0 || word_dim == 0) {
    throw ConfigError("prompt bank extents must be positive (W=" + std::to_string(classes) +
                      ", S=" + std::to_string(parts) + ", M=" + std::to_string(context_len) +
                      ", E_word=" + std::to_string(word_dim) + ")");
  }
  if (class_embeddings.shape() != Shape{classes, word_dim}) {
    throw DimensionError("class embeddings must be " + shape_str({classes, word_dim}) + ", got " +
                         shape_str(class_embeddings.shape()));
  }
  std::mt19937_64 rng(seed);
  PromptBank bank;
  bank.contexts = {normal_tensor({classes, parts, context_len, word_dim}, 0.02, rng, true),
                   "prompts.contexts", false};
  bank.class_embeddings = class_embeddings.detach();
  bank.classes = classes;
  bank.parts = parts;
  bank.context_len = context_len;
  bank.word_dim = word_dim;
  return bank;
}

Tensor assemble_sequences(const PromptBank& bank) {
  const std::size_t rows = bank.classes * bank.parts;
  std::vector<std::size_t> owner(rows);
  for (std::size_t r = 0; r < rows; ++r) owner[r] = r / bank.parts;
  Tensor names = reshape(gather_rows(bank.class_embeddings, owner), {rows, 1, bank.word_dim});
  Tensor ctx = reshape(bank.contexts.tensor, {rows, bank.context_len, bank.word_dim});
  return concat(ctx, names, 1);
}

std::vector<Tensor> sequences_for(const PromptBank& bank, std::size_t k) {
  if (k >= bank.classes) {
    throw IndexError("class index " + std::to_string(k) + " outside [0," + std::to_string(bank.classes) + ")");
  }
  const Tensor all = assemble_sequences(bank);
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < bank.parts; ++s) {
    const std::size_t row = k * bank.parts + s;
    out.push_back(reshape(gather_rows(all, std::span(&row, 1)), {bank.context_len + 1, bank.word_dim}));
  }
  return out;
}

PromptFeatures encode_bank(const PromptBank& bank, const FrozenTextEncoder& encoder) {
  if (encoder.word_dim() != bank.word_dim || encoder.seq_len() != bank.context_len + 1) {
    throw DimensionError("text encoder expects sequences of " + std::to_string(encoder.seq_len()) + " x " +
                         std::to_string(encoder.word_dim()) + ", bank produces " +
                         std::to_string(bank.context_len + 1) + " x " + std::to_string(bank.word_dim));
  }
  Tensor flat = encoder.encode_batch(assemble_sequences(bank));
  return {reshape(flat, {bank.classes, bank.parts, encoder.out_dim()})};
}

PromptFeatures prompt_features_from(const Tensor& features) {
  if (features.rank() != 3) {
    throw DimensionError("prompt features must be [W x S x E], got " + shape_str(features.shape()));
  }
  return {features};
}

PromptFeatures random_prompt_features(std::size_t classes, std::size_t parts, std::size_t dim,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {normal_tensor({classes, parts, dim}, 1.0, rng)};
}

}  // namespace xrhead
