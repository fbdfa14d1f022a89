#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "xrhead/tensor.hpp"

namespace xrhead {

/// Frozen, seeded stand-in for a text encoder.
///
/// A sequence [L x E_word] is mapped to an E-vector by
///   h = mean_l tanh(seq_l + pos_l);  out = tanh(h A1 + b1) A2 + b2.
/// The per-position tanh keeps the map sensitive to token order. None of the
/// internal tensors require grad, but gradients flow through to `seq`.
class FrozenTextEncoder {
 public:
  FrozenTextEncoder(std::uint64_t seed, std::size_t word_dim, std::size_t out_dim,
                    std::size_t seq_len);

  /// [L x E_word] -> [E]
  Tensor encode(const Tensor& seq) const;
  /// [K x L x E_word] -> [K x E]
  Tensor encode_batch(const Tensor& seqs) const;

  std::uint64_t seed() const { return seed_; }
  std::size_t word_dim() const { return word_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  std::size_t seq_len() const { return seq_len_; }
  /// FNV-1a over every internal value; changes iff a weight changes.
  std::uint64_t checksum() const;

 private:
  std::uint64_t seed_;
  std::size_t word_dim_, out_dim_, seq_len_;
  Tensor pos_, w1_, b1_, w2_, b2_;
};

/// Frozen, seeded stand-in for an image encoder: out = tanh(patches W + b),
/// applied to every patch independently.
class FrozenImageEncoder {
 public:
  FrozenImageEncoder(std::uint64_t seed, std::size_t in_dim, std::size_t out_dim);

  /// [N x D_in] -> [N x E], forward only.
  Tensor encode(const Tensor& patches) const;

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  std::uint64_t checksum() const;

 private:
  std::uint64_t seed_;
  std::size_t in_dim_, out_dim_;
  Tensor w_, b_;
};

struct FeatureMetadata {
  std::vector<std::string> class_names;
  std::vector<std::string> part_names;
};

struct FeatureFile {
  Tensor tensor;
  FeatureMetadata meta;
};

inline constexpr std::uint32_t kFeatureFileVersion = 1;

/// "XRVF" | version u32 | rank u32 | extents u64[rank] | f32[prod] |
/// u64 length + UTF-8 JSON {"class_names": [...], "part_names": [...]}.
/// All integers little-endian.
void save_features(const std::string& path, const Tensor& tensor, const FeatureMetadata& meta = {});
FeatureFile load_features(const std::string& path);

std::vector<std::uint8_t> encode_feature_file(const Tensor& tensor, const FeatureMetadata& meta);
FeatureFile decode_feature_file(std::vector<std::uint8_t> bytes);

std::uint64_t fnv1a(const std::vector<double>& values, std::uint64_t h = 1469598103934665603ull);

}  // namespace xrhead
