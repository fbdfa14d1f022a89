#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "xrhead/layers.hpp"

namespace xrhead {

struct UnaConfig {
  std::size_t dim = 64;       // E, channel width of the token features X
  std::size_t parts = 4;      // S
  std::size_t proj_dim = 0;   // output width of psi; 0 means E
  double tau = 64.0;
  /// Divide by the squared Frobenius norm instead of the norm itself.
  bool squared_denominator = false;
};

/// Part features V [S x E] for one image, or [B x S x E] for a batch.
struct PartFeatures {
  Tensor V;
};

/// Row-wise softmax over the S+1 slots (S parts plus one background slot).
Tensor normalize_attention(const Tensor& A);

/// V = (first S columns of attention)^T (x) projected, per image.
/// Accepts [N x (S+1)] with [N x E'] or the batched [B x N x (S+1)] with [B x N x E'].
Tensor pool_parts(const Tensor& attention, const Tensor& projected, std::size_t parts);

/// tau * V / ||V||_F per image (all parts jointly). With `squared_denominator`
/// the divisor is ||V||_F^2. A rank-2 input is one image, rank-3 a batch.
Tensor scale_norm(const Tensor& V, double tau, bool squared_denominator = false);

/// Unified attention: token features -> S part features.
///
///   A  = relu(Linear(BatchNorm(X)))     [N x (S+1)]
///   Ab = softmax over the S+1 slots
///   V  = Ab[:, :S]^T psi(X)              [S x E']
///   V  = tau * V / ||V||_F
///
/// Batch-norm statistics are taken over every token of every image in the batch.
class UnifiedAttention {
 public:
  struct Output {
    PartFeatures parts;
    Tensor attention;  // normalized, [B x N x (S+1)] (or [N x (S+1)] for one image)
  };

  UnifiedAttention() = default;
  UnifiedAttention(const UnaConfig& config, std::mt19937_64& rng);

  /// X [R x E] -> A [R x (S+1)], nonnegative.
  Tensor attend(const Tensor& X, bool training);
  /// psi(X), [R x E'].
  Tensor project(const Tensor& X) const;
  Output forward(const Tensor& X, bool training);

  const UnaConfig& config() const { return config_; }
  void collect(std::vector<Parameter>& out) const;

  BatchNorm bn;
  Linear phi;
  Linear psi;

 private:
  UnaConfig config_;
};

}  // namespace xrhead
