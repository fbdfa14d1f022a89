#include "xrhead/optim.hpp"

#include <cmath>
#include <numbers>
#include <set>

#include "xrhead/errors.hpp"

namespace xrhead {

double cosine_lr(int epoch, int total, double lr0) {
  if (total <= 0) throw ConfigError("cosine_lr: total epochs must be positive");
  if (epoch < 0 || epoch > total) {
    throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) + " outside [0," +
                      std::to_string(total) + "]");
  }
  if (epoch == total) return 0.0;
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / total));
}

void sgd_step(std::span<Parameter> params, OptimState& state) {
  if (state.velocity.size() != params.size()) {
    state.velocity.assign(params.size(), {});
  }
  const double lr = state.current_lr();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter& param = params[p];
    if (param.frozen || !param.tensor.requires_grad()) continue;
    auto w = param.tensor.values_mut();
    auto g = param.tensor.grad();
    auto& v = state.velocity[p];
    if (v.size() != w.size()) v.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = state.momentum * v[i] + (g[i] + state.weight_decay * w[i]);
      w[i] -= lr * v[i];
    }
  }
}

void zero_grads(std::span<Parameter> params) {
  for (auto& p : params) p.tensor.zero_grad();
}

void check_unique_names(std::span<const Parameter> params) {
  std::set<std::string> names;
  for (const auto& p : params) {
    if (!names.insert(p.name).second) throw ConfigError("duplicate parameter name '" + p.name + "'");
  }
}

}  // namespace xrhead
