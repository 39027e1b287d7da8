#pragma once

#include <functional>
#include <vector>

#include "spn/autodiff.hpp"

namespace spn {

struct GradCheckOptions {
  double step = 1e-6;        // central difference half-step
  double kink_tol = 1e-5;    // exclusion radius around relu/abs/clamp kinks
  double denom_floor = 1e-3; // relative-error denominator floor
};

struct GradCheckCoord {
  std::size_t leaf = 0;
  std::int64_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  GradCheckCoord worst;
  std::vector<GradCheckCoord> excluded;  // kink-adjacent coordinates, skipped
  std::int64_t checked = 0;
};

// Compares tape gradients of a scalar-valued function against central finite
// differences at `point`. `fn` must rebuild its graph from the given leaves on
// every call. A coordinate is excluded (and reported) when its +/- step
// evaluations cross a relu/abs/clamp kink, or approach one within `kink_tol`
// while the kink responds to the step; kinks at a fixed distance — e.g. units
// parked exactly at zero that the coordinate does not feed — do not veto it.
GradCheckResult gradient_check(
    const std::function<ad::Var(const std::vector<ad::Var>&)>& fn,
    const std::vector<DenseArray>& point, const GradCheckOptions& opt = {});

}  // namespace spn
