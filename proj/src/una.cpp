#include "xrhead/una.hpp"

#include "xrhead/errors.hpp"

namespace xrhead {

Tensor normalize_attention(const Tensor& A) { return softmax_rows(A); }

Tensor pool_parts(const Tensor& attention, const Tensor& projected, std::size_t parts) {
  if (attention.rank() == 2 && projected.rank() == 2) {
    Tensor V = pool_parts(reshape(attention, {1, attention.dim(0), attention.dim(1)}),
                          reshape(projected, {1, projected.dim(0), projected.dim(1)}), parts);
    return reshape(V, {V.dim(1), V.dim(2)});
  }
  if (attention.rank() != 3 || projected.rank() != 3 || attention.dim(0) != projected.dim(0) ||
      attention.dim(1) != projected.dim(1) || attention.dim(2) < parts) {
    throw DimensionError("pool_parts: attention " + shape_str(attention.shape()) + " and features " +
                         shape_str(projected.shape()) + " are inconsistent for S=" + std::to_string(parts));
  }
  Tensor selected = permute(slice_last(attention, 0, parts), {0, 2, 1});  // [B x S x N]
  return bmm(selected, projected);
}

Tensor scale_norm(const Tensor& V, double tau, bool squared_denominator) {
  if (V.rank() != 2 && V.rank() != 3) {
    throw DimensionError("scale_norm expects [S x E] or [B x S x E], got " + shape_str(V.shape()));
  }
  if (!(tau > 0.0)) throw ConfigError("scale_norm: tau must be positive");
  const std::size_t group = V.rank() == 2 ? V.numel() : V.dim(1) * V.dim(2);
  return group_scale_norm(V, group, tau, squared_denominator);
}

UnifiedAttention::UnifiedAttention(const UnaConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config_.dim == 0 || config_.parts == 0) throw ConfigError("UnA extents must be positive");
  if (!(config_.tau > 0.0)) throw ConfigError("UnA tau must be positive");
  if (config_.proj_dim == 0) config_.proj_dim = config_.dim;
  bn = BatchNorm("una.phi.bn", config_.dim);
  phi = Linear("una.phi.fc", config_.dim, config_.parts + 1, rng);
  psi = Linear("una.psi", config_.dim, config_.proj_dim, rng);
}

Tensor UnifiedAttention::attend(const Tensor& X, bool training) {
  if (X.rank() != 2 || X.dim(1) != config_.dim) {
    throw DimensionError("UnA expects [N x " + std::to_string(config_.dim) + "] tokens, got " +
                         shape_str(X.shape()));
  }
  if (X.dim(0) == 0) throw DimensionError("UnA needs at least one token");
  return relu(phi.forward(bn.forward(X, training)));
}

Tensor UnifiedAttention::project(const Tensor& X) const { return psi.forward(X); }

UnifiedAttention::Output UnifiedAttention::forward(const Tensor& X, bool training) {
  if (X.rank() == 2) {
    Output batched = forward(reshape(X, {1, X.dim(0), X.dim(1)}), training);
    const Tensor& V = batched.parts.V;
    const Tensor& A = batched.attention;
    return {{reshape(V, {V.dim(1), V.dim(2)})}, reshape(A, {A.dim(1), A.dim(2)})};
  }
  if (X.rank() != 3) throw DimensionError("UnA expects [N x E] or [B x N x E], got " + shape_str(X.shape()));
  const std::size_t batch = X.dim(0), tokens = X.dim(1);
  Tensor flat = reshape(X, {batch * tokens, X.dim(2)});
  Tensor attn = normalize_attention(attend(flat, training));
  Tensor attn3 = reshape(attn, {batch, tokens, config_.parts + 1});
  Tensor proj = reshape(project(flat), {batch, tokens, config_.proj_dim});
  Tensor V = scale_norm(pool_parts(attn3, proj, config_.parts), config_.tau, config_.squared_denominator);
  return {{V}, attn3};
}

void UnifiedAttention::collect(std::vector<Parameter>& out) const {
  bn.collect(out);
  phi.collect(out);
  psi.collect(out);
}

}  // namespace xrhead
