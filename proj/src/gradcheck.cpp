#include "xrhead/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "xrhead/errors.hpp"
#include "xrhead/ops.hpp"

namespace xrhead {

namespace {

// A relu input changing sign between the probes invalidates the difference
// quotient; such coordinates are re-probed with a smaller step.
constexpr int kMaxShrink = 4;

struct TracedLoss {
  double value;
  std::uint64_t pattern;
};

TracedLoss eval_loss(const std::function<Tensor()>& loss_fn) {
  KinkTrace trace;
  KinkTrace* previous = set_kink_trace(&trace);
  double v = 0.0;
  try {
    v = loss_fn().item();
  } catch (...) {
    set_kink_trace(previous);
    throw;
  }
  set_kink_trace(previous);
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: loss is not finite");
  return {v, trace.hash};
}

}  // namespace

std::vector<GradCheckEntry> finite_diff_check(const std::function<Tensor()>& loss_fn,
                                              std::span<Parameter> params, double eps,
                                              std::size_t max_coords, std::uint64_t seed) {
  const std::uint64_t base_pattern = eval_loss(loss_fn).pattern;
  zero_grads(params);
  Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw NumericError("finite_diff_check: loss is not finite");
  backward(loss);

  std::mt19937_64 rng(seed);
  std::vector<GradCheckEntry> out;
  for (auto& param : params) {
    if (param.frozen) continue;
    GradCheckEntry entry{param.name, 0.0, 0};
    auto w = param.tensor.values_mut();
    const std::vector<double> analytic(param.tensor.grad().begin(), param.tensor.grad().end());

    std::vector<std::size_t> coords(w.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords != 0 && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t i : coords) {
      const double saved = w[i];
      double step = eps, numeric = 0.0;
      for (int attempt = 0; attempt <= kMaxShrink; ++attempt, step /= 10.0) {
        w[i] = saved + step;
        const TracedLoss up = eval_loss(loss_fn);
        w[i] = saved - step;
        const TracedLoss down = eval_loss(loss_fn);
        w[i] = saved;
        numeric = (up.value - down.value) / (2.0 * step);
        if (up.pattern == base_pattern && down.pattern == base_pattern) break;
        if (attempt == 0) ++entry.kink_coords;
      }
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      entry.max_rel_error = std::max(entry.max_rel_error, std::abs(a - numeric) / denom);
      ++entry.coords_checked;
    }
    out.push_back(std::move(entry));
  }
  return out;
}

double max_error(std::span<const GradCheckEntry> entries) {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

}  // namespace xrhead
