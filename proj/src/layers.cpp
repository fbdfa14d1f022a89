#include "xrhead/layers.hpp"

#include <cmath>

namespace xrhead {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng, bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng,
               bool with_bias)
    : has_bias(with_bias) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> w(in * out);
  for (double& x : w) x = dist(rng);
  weight = {Tensor({in, out}, std::move(w), true), name + ".weight", false};
  std::vector<double> b(out, 0.0);
  if (with_bias) {
    for (double& x : b) x = dist(rng);
  }
  bias = {Tensor({out}, std::move(b), with_bias), name + ".bias", !with_bias};
}

Tensor Linear::forward(const Tensor& x) const {
  Tensor y = matmul(x, weight.tensor);
  return has_bias ? add(y, bias.tensor) : y;
}

void Linear::collect(std::vector<Parameter>& out) const {
  out.push_back(weight);
  if (has_bias) out.push_back(bias);
}

BatchNorm::BatchNorm(const std::string& name, std::size_t channels)
    : gamma{Tensor::full({channels}, 1.0, true), name + ".gamma", false},
      beta{Tensor::zeros({channels}, true), name + ".beta", false},
      state(channels) {}

Tensor BatchNorm::forward(const Tensor& x, bool training) {
  return batch_norm(x, state, gamma.tensor, beta.tensor, training);
}

void BatchNorm::collect(std::vector<Parameter>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
}

Mlp::Mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out,
         std::mt19937_64& rng)
    : fc1(name + ".fc1", in, hidden, rng, false), bn(name + ".bn", hidden), fc2(name + ".fc2", hidden, out, rng) {}

Tensor Mlp::forward(const Tensor& x, bool training) {
  return fc2.forward(relu(bn.forward(fc1.forward(x), training)));
}

void Mlp::collect(std::vector<Parameter>& out) const {
  fc1.collect(out);
  bn.collect(out);
  fc2.collect(out);
}

}  // namespace xrhead
