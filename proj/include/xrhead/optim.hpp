#pragma once

#include <span>
#include <string>
#include <vector>

#include "xrhead/tensor.hpp"

namespace xrhead {

/// A named trainable tensor. Frozen parameters are skipped by the optimizer.
struct Parameter {
  Tensor tensor;
  std::string name;
  bool frozen = false;
};

/// lr0 * 0.5 * (1 + cos(pi * epoch / total)).
double cosine_lr(int epoch, int total, double lr0);

/// SGD with momentum and L2 weight decay under a cosine schedule.
struct OptimState {
  double lr0 = 2e-3;
  double weight_decay = 1e-4;
  double momentum = 0.9;
  int epoch = 0;
  int total_epochs = 100;
  std::vector<std::vector<double>> velocity;

  double current_lr() const { return cosine_lr(epoch, total_epochs, lr0); }
};

/// v <- momentum * v + (grad + wd * w);  w <- w - lr * v.
void sgd_step(std::span<Parameter> params, OptimState& state);

void zero_grads(std::span<Parameter> params);

/// Throws ConfigError if two parameters share a name.
void check_unique_names(std::span<const Parameter> params);

}  // namespace xrhead
