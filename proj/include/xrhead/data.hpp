#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "xrhead/tensor.hpp"

namespace xrhead {

/// Parameters of the synthetic fine-grained benchmark.
struct SyntheticSpec {
  std::size_t classes = 20;          // W
  std::size_t superclasses = 5;      // G, must divide W
  std::size_t parts = 4;             // true part count
  std::size_t tokens = 16;           // N tokens per image
  std::size_t patch_dim = 24;        // D_in
  std::size_t word_dim = 32;         // width of the class-embedding table
  double noise = 0.3;                // sigma of per-token Gaussian noise
  double class_offset = 0.5;         // spread of class prototypes around their superclass
  std::size_t train_per_class = 32;
  std::size_t test_per_class = 64;
  bool cross_structure = false;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const SyntheticSpec& spec);
/// Strict: unknown keys are a ConfigError; missing keys keep their defaults.
void from_json(const nlohmann::json& j, SyntheticSpec& spec);

struct Sample {
  std::vector<double> patches;              // [N x D_in], row-major
  std::size_t label = 0;
  std::vector<std::uint32_t> part_assignment;  // per token, 0 = background, p+1 = part p
};

struct Dataset {
  SyntheticSpec spec;
  std::vector<Sample> train;
  std::vector<Sample> test;
  Tensor class_embeddings;  // [W x word_dim]; row k seeds the class-name row of the prompts
  std::vector<std::string> class_names;
  std::vector<std::string> part_names;

  std::size_t classes() const { return spec.classes; }
  std::size_t tokens() const { return spec.tokens; }
  std::size_t patch_dim() const { return spec.patch_dim; }
};

/// Builds the benchmark. Each token is part_code[p] + prototype(class, p) + noise,
/// where background tokens use a shared background prototype. Tokens are
/// assigned to parts round-robin (background included) and then shuffled.
///
/// Without cross structure a class prototype is its superclass prototype plus
/// a class offset. With cross structure the siblings of a superclass share one
/// pattern set and differ only in which part carries which pattern: sibling j
/// uses the j-th arrangement fixing part 0, and the n-th sample of a class
/// rotates the pattern set by n mod S_true. Per-part token statistics then
/// match across siblings; only the pairing of patterns between parts differs.
/// At most (S_true-1)! siblings per superclass. Stored values are rounded to
/// float precision so the on-disk format is lossless.
Dataset generate(const SyntheticSpec& spec);

/// Exactly `shots` samples per class, drawn reproducibly from `seed`, kept in
/// their original order.
std::vector<Sample> few_shot_split(const Dataset& ds, std::size_t shots, std::uint64_t seed);

/// Container with "XRVD" magic, little-endian, float32 payloads.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);
std::vector<std::uint8_t> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::vector<std::uint8_t> bytes);

/// Stacks the patches of `samples` into [B x N x D_in].
Tensor stack_patches(const std::vector<const Sample*>& samples, std::size_t tokens, std::size_t patch_dim);

}  // namespace xrhead
