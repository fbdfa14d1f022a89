#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "xrhead/ops.hpp"
#include "xrhead/optim.hpp"

namespace xrhead {

/// Tensor with N(0, stddev^2) entries.
Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad = false);

/// y = x W + b, W stored [in x out]. Uniform(+-1/sqrt(in)) initialization.
struct Linear {
  Parameter weight;
  Parameter bias;
  bool has_bias = true;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
         bool with_bias = true);

  std::size_t in_features() const { return weight.tensor.dim(0); }
  std::size_t out_features() const { return weight.tensor.dim(1); }
  Tensor forward(const Tensor& x) const;
  void collect(std::vector<Parameter>& out) const;
};

struct BatchNorm {
  Parameter gamma;
  Parameter beta;
  BatchNormState state;

  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t channels);

  Tensor forward(const Tensor& x, bool training);
  void collect(std::vector<Parameter>& out) const;
};

/// FC -> BN -> ReLU -> FC. The first FC has no bias: training-mode
/// batch-norm would cancel it and leave it with an identically zero gradient.
struct Mlp {
  Linear fc1;
  BatchNorm bn;
  Linear fc2;

  Mlp() = default;
  Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
      std::mt19937_64& rng);

  std::size_t in_features() const { return fc1.in_features(); }
  std::size_t out_features() const { return fc2.out_features(); }
  Tensor forward(const Tensor& x, bool training);
  void collect(std::vector<Parameter>& out) const;
};

}  // namespace xrhead
