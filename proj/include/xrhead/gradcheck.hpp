#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xrhead/optim.hpp"

namespace xrhead {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t kink_coords = 0;  // coordinates re-probed because a relu flipped
};

/// Compares analytic adjoints against central differences
/// (L(w+eps) - L(w-eps)) / 2eps, coordinate by coordinate.
///
/// The relative error of one coordinate is |a - n| / max(|a|, |n|, 1e-8).
/// `max_coords` bounds the coordinates sampled per parameter (0 = all);
/// sampling is deterministic in `seed`. Frozen parameters are skipped.
/// When a probe flips the sign of any relu input relative to the base point,
/// the step is divided by 10 (up to 4 times) so the quotient stays on the
/// linear piece the analytic gradient belongs to.
/// `loss_fn` must be deterministic. Throws NumericError on a non-finite loss.
std::vector<GradCheckEntry> finite_diff_check(const std::function<Tensor()>& loss_fn,
                                              std::span<Parameter> params, double eps = 1e-5,
                                              std::size_t max_coords = 0, std::uint64_t seed = 0);

double max_error(std::span<const GradCheckEntry> entries);

}  // namespace xrhead
