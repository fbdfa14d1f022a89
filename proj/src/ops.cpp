#include "xrhead/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "xrhead/errors.hpp"

namespace xrhead {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

detail::Node* parent(const detail::Node& self, std::size_t i) { return self.parents[i].get(); }

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// Number of times `b` repeats inside `a` under suffix broadcasting.
std::size_t broadcast_outer(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  bool ok = bs.size() <= as.size();
  for (std::size_t i = 0; ok && i < bs.size(); ++i) {
    ok = bs[bs.size() - 1 - i] == as[as.size() - 1 - i];
  }
  if (!ok) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(bs) + " onto " +
                         shape_str(as));
  }
  return a.numel() / std::max<std::size_t>(b.numel(), 1);
}

// (outer, extent, inner) decomposition around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

std::size_t last_extent(const Tensor& a) { return a.rank() == 0 ? 1 : a.shape().back(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.values().data(), m, k) * ConstMap(b.values().data(), k, n);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](const detail::Node& self) {
    auto* pa = parent(self, 0);
    auto* pb = parent(self, 1);
    ConstMap g(self.grad.data(), m, n);
    if (pa->requires_grad) {
      MutMap(pa->grad.data(), m, k).noalias() += g * ConstMap(pb->value.data(), k, n).transpose();
    }
    if (pb->requires_grad) {
      MutMap(pb->grad.data(), k, n).noalias() += ConstMap(pa->value.data(), m, k).transpose() * g;
    }
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  const std::size_t bk = transpose_b ? b.dim(2) : b.dim(1);
  if (b.dim(0) != batch || bk != k) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + (transpose_b ? " (b transposed)" : ""));
  }
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMap am(a.values().data() + i * m * k, m, k);
    MutMap om(out.data() + i * m * n, m, n);
    if (transpose_b) {
      om.noalias() = am * ConstMap(b.values().data() + i * n * k, n, k).transpose();
    } else {
      om.noalias() = am * ConstMap(b.values().data() + i * k * n, k, n);
    }
  }
  return Tensor::make_result(
      {batch, m, n}, std::move(out), {a, b}, [batch, m, k, n, transpose_b](const detail::Node& self) {
        auto* pa = parent(self, 0);
        auto* pb = parent(self, 1);
        for (std::size_t i = 0; i < batch; ++i) {
          ConstMap g(self.grad.data() + i * m * n, m, n);
          ConstMap av(pa->value.data() + i * m * k, m, k);
          if (transpose_b) {
            ConstMap bv(pb->value.data() + i * n * k, n, k);
            if (pa->requires_grad) MutMap(pa->grad.data() + i * m * k, m, k).noalias() += g * bv;
            if (pb->requires_grad) {
              MutMap(pb->grad.data() + i * n * k, n, k).noalias() += g.transpose() * av;
            }
          } else {
            ConstMap bv(pb->value.data() + i * k * n, k, n);
            if (pa->requires_grad) {
              MutMap(pa->grad.data() + i * m * k, m, k).noalias() += g * bv.transpose();
            }
            if (pb->requires_grad) {
              MutMap(pb->grad.data() + i * k * n, k, n).noalias() += av.transpose() * g;
            }
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "add");
  const std::size_t inner = b.numel();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bv[i];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [outer, inner](const detail::Node& self) {
    auto* pa = parent(self, 0);
    auto* pb = parent(self, 1);
    if (pa->requires_grad) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
    }
    if (pb->requires_grad) {
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) pb->grad[i] += self.grad[o * inner + i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t outer = broadcast_outer(a, b, "mul");
  const std::size_t inner = b.numel();
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = av[o * inner + i] * bv[i];
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [outer, inner](const detail::Node& self) {
    auto* pa = parent(self, 0);
    auto* pb = parent(self, 1);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const double g = self.grad[o * inner + i];
        if (pa->requires_grad) pa->grad[o * inner + i] += g * pb->value[i];
        if (pb->requires_grad) pb->grad[i] += g * pa->value[o * inner + i];
      }
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [factor](const detail::Node& self) {
    auto* pa = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += factor * self.grad[i];
  });
}

namespace {
thread_local KinkTrace* g_kink_trace = nullptr;
}  // namespace

KinkTrace* set_kink_trace(KinkTrace* trace) { return std::exchange(g_kink_trace, trace); }

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) {
    if (g_kink_trace) g_kink_trace->hash = (g_kink_trace->hash ^ (v > 0.0 ? 2u : 1u)) * 0x100000001b3ull;
    v = v > 0.0 ? v : 0.0;
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [](const detail::Node& self) {
    auto* pa = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa->value[i] > 0.0) pa->grad[i] += self.grad[i];
    }
  });
}

Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (double& v : out) v = std::tanh(v);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [](const detail::Node& self) {
    auto* pa = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const double y = self.value[i];
      pa->grad[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t n = last_extent(a);
  if (n == 0) throw DimensionError("softmax_rows: empty rows");
  const std::size_t rows = a.numel() / n;
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= z;
  }
  return Tensor::make_result(a.shape(), std::move(out), {a}, [rows, n](const detail::Node& self) {
    auto* pa = parent(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
      for (std::size_t j = 0; j < n; ++j) pa->grad[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Tensor l2_normalize(const Tensor& a) {
  const std::size_t n = last_extent(a);
  const std::size_t rows = n == 0 ? 0 : a.numel() / n;
  std::vector<double> out(a.numel());
  std::vector<double> norms(rows);
  const auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += av[r * n + j] * av[r * n + j];
    const double norm = std::sqrt(ss);
    if (!(norm > 0.0)) throw DegenerateInputError("l2_normalize: zero-norm vector (row " + std::to_string(r) + ")");
    norms[r] = norm;
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * n + j] / norm;
  }
  return Tensor::make_result(a.shape(), std::move(out), {a},
                             [rows, n, norms = std::move(norms)](const detail::Node& self) {
                               auto* pa = parent(self, 0);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* y = self.value.data() + r * n;
                                 const double* g = self.grad.data() + r * n;
                                 double dot = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) dot += y[j] * g[j];
                                 for (std::size_t j = 0; j < n; ++j) {
                                   pa->grad[r * n + j] += (g[j] - y[j] * dot) / norms[r];
                                 }
                               }
                             });
}

Tensor group_scale_norm(const Tensor& a, std::size_t group, double tau, bool squared_denominator) {
  if (group == 0 || a.numel() % group != 0) {
    throw DimensionError("group_scale_norm: group size " + std::to_string(group) +
                         " does not divide " + shape_str(a.shape()));
  }
  const std::size_t groups = a.numel() / group;
  std::vector<double> out(a.numel());
  std::vector<double> denom(groups);
  const auto av = a.values();
  for (std::size_t gi = 0; gi < groups; ++gi) {
    double ss = 0.0;
    for (std::size_t j = 0; j < group; ++j) ss += av[gi * group + j] * av[gi * group + j];
    if (!(ss > 0.0)) {
      throw DegenerateInputError("scale_norm: all-zero feature block " + std::to_string(gi));
    }
    denom[gi] = squared_denominator ? ss : std::sqrt(ss);
    for (std::size_t j = 0; j < group; ++j) out[gi * group + j] = tau * av[gi * group + j] / denom[gi];
  }
  return Tensor::make_result(
      a.shape(), std::move(out), {a},
      [groups, group, tau, squared_denominator, denom = std::move(denom)](const detail::Node& self) {
        auto* pa = parent(self, 0);
        for (std::size_t gi = 0; gi < groups; ++gi) {
          const double* x = pa->value.data() + gi * group;
          const double* g = self.grad.data() + gi * group;
          double dot = 0.0;
          for (std::size_t j = 0; j < group; ++j) dot += x[j] * g[j];
          const double d = denom[gi];
          // sqrt: d(x/|x|) = (g - xhat (xhat.g)) / |x|;  squared: d(x/s) = g/s - 2x (x.g)/s^2
          const double corr = squared_denominator ? 2.0 * dot / (d * d) : dot / (d * d * d);
          for (std::size_t j = 0; j < group; ++j) {
            pa->grad[gi * group + j] += tau * (g[j] / d - x[j] * corr);
          }
        }
      });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return Tensor::make_result({}, {s}, {a}, [](const detail::Node& self) {
    auto* pa = parent(self, 0);
    for (double& g : pa->grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("sum_axis: axis out of range for " + shape_str(a.shape()));
  const AxisSplit s = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto av = a.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t e = 0; e < s.extent; ++e) {
      const double* x = av.data() + (o * s.extent + e) * s.inner;
      double* y = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) y[i] += x[i];
    }
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a}, [s](const detail::Node& self) {
    auto* pa = parent(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t e = 0; e < s.extent; ++e) {
        double* dx = pa->grad.data() + (o * s.extent + e) * s.inner;
        const double* g = self.grad.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dx[i] += g[i];
      }
    }
  });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank() || a.dim(axis) == 0) {
    throw DimensionError("mean_axis: invalid axis for " + shape_str(a.shape()));
  }
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, [](const detail::Node& self) {
    auto* pa = parent(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& perm) {
  const std::size_t r = a.rank();
  if (perm.size() != r) throw DimensionError("permute: rank mismatch for " + shape_str(a.shape()));
  std::vector<bool> used(r, false);
  for (std::size_t p : perm) {
    if (p >= r || used[p]) throw DimensionError("permute: invalid axis permutation");
    used[p] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * a.shape()[i];
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = a.shape()[perm[i]];

  // source[k] = flat input index feeding flat output index k
  std::vector<std::size_t> source(a.numel());
  std::vector<std::size_t> counter(r, 0);
  for (std::size_t k = 0; k < source.size(); ++k) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < r; ++i) src += counter[i] * in_strides[perm[i]];
    source[k] = src;
    for (std::size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  std::vector<double> out(a.numel());
  const auto av = a.values();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = av[source[k]];
  return Tensor::make_result(std::move(out_shape), std::move(out), {a},
                             [source = std::move(source)](const detail::Node& self) {
                               auto* pa = parent(self, 0);
                               for (std::size_t k = 0; k < source.size(); ++k) {
                                 pa->grad[source[k]] += self.grad[k];
                               }
                             });
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin > end || end > a.shape().back()) {
    throw DimensionError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(a.shape()));
  }
  std::vector<std::size_t> index(end - begin);
  std::iota(index.begin(), index.end(), begin);
  return take_last(a, index);
}

Tensor take_last(const Tensor& a, std::span<const std::size_t> index) {
  if (a.rank() == 0) throw DimensionError("take_last on a scalar");
  const std::size_t n = a.shape().back();
  for (std::size_t i : index) {
    if (i >= n) throw IndexError("take_last: index " + std::to_string(i) + " >= " + std::to_string(n));
  }
  const std::size_t rows = n == 0 ? 0 : a.numel() / n;
  const std::size_t m = index.size();
  Shape out_shape = a.shape();
  out_shape.back() = m;
  std::vector<double> out(rows * m);
  const auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = av[r * n + index[j]];
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a},
                             [rows, n, m, idx = std::vector<std::size_t>(index.begin(), index.end())](
                                 const detail::Node& self) {
                               auto* pa = parent(self, 0);
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t j = 0; j < m; ++j) {
                                   pa->grad[r * n + idx[j]] += self.grad[r * m + j];
                                 }
                               }
                             });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  if (a.rank() == 0) throw DimensionError("gather_rows on a scalar");
  const std::size_t rows = a.dim(0);
  const std::size_t width = rows == 0 ? 0 : a.numel() / rows;
  for (std::size_t i : index) {
    if (i >= rows) throw IndexError("gather_rows: index " + std::to_string(i) + " >= " + std::to_string(rows));
  }
  Shape out_shape = a.shape();
  out_shape[0] = index.size();
  std::vector<double> out(index.size() * width);
  const auto av = a.values();
  for (std::size_t r = 0; r < index.size(); ++r) {
    std::copy_n(av.data() + index[r] * width, width, out.data() + r * width);
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a},
                             [width, idx = std::vector<std::size_t>(index.begin(), index.end())](
                                 const detail::Node& self) {
                               auto* pa = parent(self, 0);
                               for (std::size_t r = 0; r < idx.size(); ++r) {
                                 for (std::size_t j = 0; j < width; ++j) {
                                   pa->grad[idx[r] * width + j] += self.grad[r * width + j];
                                 }
                               }
                             });
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  bool ok = a.rank() == b.rank() && axis < a.rank();
  for (std::size_t i = 0; ok && i < a.rank(); ++i) ok = i == axis || a.shape()[i] == b.shape()[i];
  if (!ok) {
    throw DimensionError("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ off axis " + std::to_string(axis));
  }
  const AxisSplit sa = split_at(a.shape(), axis);
  const AxisSplit sb = split_at(b.shape(), axis);
  const std::size_t ca = sa.extent * sa.inner;
  const std::size_t cb = sb.extent * sb.inner;
  Shape out_shape = a.shape();
  out_shape[axis] += b.shape()[axis];
  std::vector<double> out(a.numel() + b.numel());
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(a.values().data() + o * ca, ca, out.data() + o * (ca + cb));
    std::copy_n(b.values().data() + o * cb, cb, out.data() + o * (ca + cb) + ca);
  }
  const std::size_t outer = sa.outer;
  return Tensor::make_result(std::move(out_shape), std::move(out), {a, b}, [outer, ca, cb](const detail::Node& self) {
    auto* pa = parent(self, 0);
    auto* pb = parent(self, 1);
    for (std::size_t o = 0; o < outer; ++o) {
      const double* g = self.grad.data() + o * (ca + cb);
      if (pa->requires_grad) {
        for (std::size_t j = 0; j < ca; ++j) pa->grad[o * ca + j] += g[j];
      }
      if (pb->requires_grad) {
        for (std::size_t j = 0; j < cb; ++j) pb->grad[o * cb + j] += g[ca + j];
      }
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank(logits, 2, "cross_entropy");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(batch) + " rows");
  }
  if (batch == 0 || classes == 0) throw DimensionError("cross_entropy: empty logits");
  std::vector<double> probs(logits.numel());
  double loss = 0.0;
  const auto z = logits.values();
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0," +
                       std::to_string(classes) + ")");
    }
    const double* row = z.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double denom = 0.0;
    for (std::size_t w = 0; w < classes; ++w) denom += (probs[b * classes + w] = std::exp(row[w] - mx));
    for (std::size_t w = 0; w < classes; ++w) probs[b * classes + w] /= denom;
    loss += std::log(denom) + mx - row[labels[b]];
  }
  loss /= static_cast<double>(batch);
  return Tensor::make_result(
      {}, {loss}, {logits},
      [batch, classes, probs = std::move(probs), lab = std::vector<std::size_t>(labels.begin(), labels.end())](
          const detail::Node& self) {
        auto* pz = parent(self, 0);
        const double g = self.grad[0] / static_cast<double>(batch);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t w = 0; w < classes; ++w) {
            const double target = w == lab[b] ? 1.0 : 0.0;
            pz->grad[b * classes + w] += g * (probs[b * classes + w] - target);
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, BatchNormState& state, const Tensor& gamma, const Tensor& beta,
                  bool training) {
  require_rank(x, 2, "batch_norm");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (gamma.numel() != cols || beta.numel() != cols || state.running_mean.size() != cols ||
      state.running_var.size() != cols) {
    throw DimensionError("batch_norm: " + std::to_string(cols) + " channels but parameters sized " +
                         std::to_string(gamma.numel()) + "/" + std::to_string(state.running_mean.size()));
  }
  if (training && rows < 2) {
    throw DataError("batch_norm: training mode needs a batch of at least 2 rows, got " +
                    std::to_string(rows));
  }
  const auto xv = x.values();
  std::vector<double> mu(cols, 0.0), inv_std(cols, 0.0);
  if (training) {
    std::vector<double> var(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) mu[c] += xv[r * cols + c];
    }
    for (double& m : mu) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double d = xv[r * cols + c] - mu[c];
        var[c] += d * d;
      }
    }
    for (std::size_t c = 0; c < cols; ++c) {
      var[c] /= static_cast<double>(rows);
      inv_std[c] = 1.0 / std::sqrt(var[c] + state.eps);
      // running variance tracks the unbiased estimate
      const double unbiased = var[c] * static_cast<double>(rows) / static_cast<double>(rows - 1);
      state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
      state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t c = 0; c < cols; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
    }
  }
  std::vector<double> xhat(x.numel()), out(x.numel());
  const auto gv = gamma.values();
  const auto bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      xhat[i] = (xv[i] - mu[c]) * inv_std[c];
      out[i] = gv[c] * xhat[i] + bv[c];
    }
  }
  return Tensor::make_result(
      {rows, cols}, std::move(out), {x, gamma, beta},
      [rows, cols, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](const detail::Node& self) {
        auto* px = parent(self, 0);
        auto* pg = parent(self, 1);
        auto* pb = parent(self, 2);
        std::vector<double> sum_dy(cols, 0.0), sum_dy_xhat(cols, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            sum_dy[c] += self.grad[i];
            sum_dy_xhat[c] += self.grad[i] * xhat[i];
          }
        }
        if (pg->requires_grad) {
          for (std::size_t c = 0; c < cols; ++c) pg->grad[c] += sum_dy_xhat[c];
        }
        if (pb->requires_grad) {
          for (std::size_t c = 0; c < cols; ++c) pb->grad[c] += sum_dy[c];
        }
        if (!px->requires_grad) return;
        const double n = static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double scale_c = pg->value[c] * inv_std[c];
            if (training) {
              px->grad[i] += scale_c * (self.grad[i] - sum_dy[c] / n - xhat[i] * sum_dy_xhat[c] / n);
            } else {
              px->grad[i] += scale_c * self.grad[i];
            }
          }
        }
      });
}

}  // namespace xrhead
