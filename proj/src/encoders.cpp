#include "xrhead/encoders.hpp"

#include <cmath>
#include <cstring>
#include <nlohmann/json.hpp>
#include <random>

#include "xrhead/binary_io.hpp"
#include "xrhead/errors.hpp"
#include "xrhead/layers.hpp"
#include "xrhead/ops.hpp"

namespace xrhead {

std::uint64_t fnv1a(const std::vector<double>& values, std::uint64_t h) {
  for (double v : values) {
    unsigned char bytes[sizeof(double)];
    std::memcpy(bytes, &v, sizeof v);
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  }
  return h;
}

namespace {

std::uint64_t checksum_of(std::initializer_list<const Tensor*> tensors) {
  std::uint64_t h = 1469598103934665603ull;
  for (const Tensor* t : tensors) {
    h = fnv1a(std::vector<double>(t->values().begin(), t->values().end()), h);
  }
  return h;
}

}  // namespace

FrozenTextEncoder::FrozenTextEncoder(std::uint64_t seed, std::size_t word_dim, std::size_t out_dim,
                                     std::size_t seq_len)
    : seed_(seed), word_dim_(word_dim), out_dim_(out_dim), seq_len_(seq_len) {
  if (word_dim == 0 || out_dim == 0 || seq_len == 0) {
    throw ConfigError("text encoder extents must be positive");
  }
  std::mt19937_64 rng(seed);
  const std::size_t hidden = out_dim;
  pos_ = normal_tensor({seq_len, word_dim}, 0.5, rng);
  w1_ = normal_tensor({word_dim, hidden}, 1.0 / std::sqrt(static_cast<double>(word_dim)), rng);
  b1_ = normal_tensor({hidden}, 0.1, rng);
  w2_ = normal_tensor({hidden, out_dim}, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  b2_ = normal_tensor({out_dim}, 0.1, rng);
}

Tensor FrozenTextEncoder::encode_batch(const Tensor& seqs) const {
  if (seqs.rank() != 3 || seqs.dim(1) != seq_len_ || seqs.dim(2) != word_dim_) {
    throw DimensionError("text encoder expects [K x " + std::to_string(seq_len_) + " x " +
                         std::to_string(word_dim_) + "] sequences, got " + shape_str(seqs.shape()));
  }
  Tensor pooled = mean_axis(tanh(add(seqs, pos_)), 1);
  Tensor hidden = tanh(add(matmul(pooled, w1_), b1_));
  return add(matmul(hidden, w2_), b2_);
}

Tensor FrozenTextEncoder::encode(const Tensor& seq) const {
  if (seq.rank() != 2) {
    throw DimensionError("text encoder expects an [L x E_word] sequence, got " + shape_str(seq.shape()));
  }
  Tensor out = encode_batch(reshape(seq, {1, seq.dim(0), seq.dim(1)}));
  return reshape(out, {out_dim_});
}

std::uint64_t FrozenTextEncoder::checksum() const { return checksum_of({&pos_, &w1_, &b1_, &w2_, &b2_}); }

FrozenImageEncoder::FrozenImageEncoder(std::uint64_t seed, std::size_t in_dim, std::size_t out_dim)
    : seed_(seed), in_dim_(in_dim), out_dim_(out_dim) {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("image encoder extents must be positive");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  w_ = normal_tensor({in_dim, out_dim}, 1.0 / std::sqrt(static_cast<double>(in_dim)), rng);
  b_ = normal_tensor({out_dim}, 0.1, rng);
}

Tensor FrozenImageEncoder::encode(const Tensor& patches) const {
  if (patches.rank() != 2 || patches.dim(1) != in_dim_) {
    throw DimensionError("image encoder expects [N x " + std::to_string(in_dim_) + "] patches, got " +
                         shape_str(patches.shape()));
  }
  return tanh(add(matmul(patches.detach(), w_), b_));
}

std::uint64_t FrozenImageEncoder::checksum() const { return checksum_of({&w_, &b_}); }

std::vector<std::uint8_t> encode_feature_file(const Tensor& tensor, const FeatureMetadata& meta) {
  ByteWriter w;
  w.magic("XRVF");
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(tensor.rank()));
  for (std::size_t e : tensor.shape()) w.u64(e);
  for (double v : tensor.values()) w.f32(static_cast<float>(v));
  nlohmann::json j{{"class_names", meta.class_names}, {"part_names", meta.part_names}};
  w.string(j.dump());
  return w.bytes();
}

FeatureFile decode_feature_file(std::vector<std::uint8_t> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("XRVF");
  const std::uint64_t version_at = r.offset();
  if (r.u32() != kFeatureFileVersion) throw FormatError("unsupported feature file version", version_at);
  const std::uint64_t rank_at = r.offset();
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError("invalid rank " + std::to_string(rank), rank_at);
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& e : shape) {
    const std::uint64_t at = r.offset();
    e = r.u64();
    if (e == 0 || e > (1ull << 32)) throw FormatError("invalid extent", at);
    count *= e;
    if (count > (1ull << 34)) throw FormatError("extent product too large", at);
  }
  r.require(count * 4, "payload");
  std::vector<double> values(count);
  for (double& v : values) v = r.f32();
  const std::uint64_t meta_at = r.offset();
  FeatureFile out;
  try {
    const auto j = nlohmann::json::parse(r.string());
    out.meta.class_names = j.at("class_names").get<std::vector<std::string>>();
    out.meta.part_names = j.at("part_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad metadata block: ") + e.what(), meta_at);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after metadata", r.offset());
  out.tensor = Tensor(std::move(shape), std::move(values));
  return out;
}

void save_features(const std::string& path, const Tensor& tensor, const FeatureMetadata& meta) {
  write_file_atomic(path, encode_feature_file(tensor, meta));
}

FeatureFile load_features(const std::string& path) { return decode_feature_file(read_file_bytes(path)); }

}  // namespace xrhead
