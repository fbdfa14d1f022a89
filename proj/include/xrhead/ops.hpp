#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xrhead/tensor.hpp"

namespace xrhead {

// Differentiable operations. Every function records a graph vertex when any
// input requires grad; otherwise it is a plain forward computation.

/// 2-D product [m x k] * [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);

/// Batched product of rank-3 tensors: [B x m x k] * [B x k x n], or
/// [B x m x k] * [B x n x k]^T when `transpose_b` is set.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);

/// Elementwise a + b. `b` may have a shape equal to a trailing suffix of
/// `a`'s shape, in which case it is repeated over the leading axes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise a * b with the same broadcasting rule as add().
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& a);

/// While installed, every relu() call folds the sign pattern of its input into
/// `hash`, so two forward passes can be compared for crossed kinks.
struct KinkTrace {
  std::uint64_t hash = 0xcbf29ce484222325ull;
};
/// Installs `trace` for the current thread (nullptr to remove); returns the previous one.
KinkTrace* set_kink_trace(KinkTrace* trace);
Tensor tanh(const Tensor& a);

/// Softmax along the last axis, max-subtracted per row.
Tensor softmax_rows(const Tensor& a);

/// Unit Euclidean norm along the last axis. Zero rows are rejected.
Tensor l2_normalize(const Tensor& a);

/// Splits `a` into contiguous groups of `group` values and rescales each to
/// tau * g / ||g||. With `squared_denominator` the divisor is ||g||^2.
Tensor group_scale_norm(const Tensor& a, std::size_t group, double tau,
                        bool squared_denominator = false);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor mean_axis(const Tensor& a, std::size_t axis);

Tensor reshape(const Tensor& a, Shape shape);
/// 2-D transpose.
Tensor transpose(const Tensor& a);
/// General axis permutation: output axis i is input axis perm[i].
Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm);

/// Columns [begin, end) of the last axis.
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end);
/// Gathers entries of the last axis in the order given by `index`.
Tensor take_last(const Tensor& a, std::span<const std::size_t> index);
/// Gathers slices along axis 0; indices may repeat (adjoints are summed).
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);
Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis);

/// Mean negative log-likelihood of `labels` under softmax(logits), logits [B x W].
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

/// Running statistics for batch_norm. Mutated by training-mode forward passes.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

/// Per-column normalization of x [R x C] followed by gamma * xhat + beta.
/// Training mode uses the batch statistics (biased variance) and updates the
/// running estimates; eval mode uses the running estimates.
Tensor batch_norm(const Tensor& x, BatchNormState& state, const Tensor& gamma,
                  const Tensor& beta, bool training);

}  // namespace xrhead
