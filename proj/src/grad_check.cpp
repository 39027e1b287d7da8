#include "spn/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace spn {

namespace {

struct ProbedEval {
  double value = 0.0;
  double min_kink_distance = 0.0;
  std::uint64_t branch_signature = 0;
  std::uint64_t observations = 0;
};

ProbedEval eval_at(const std::function<ad::Var(const std::vector<ad::Var>&)>& fn,
                   const std::vector<DenseArray>& point) {
  std::vector<ad::Var> leaves;
  leaves.reserve(point.size());
  for (const DenseArray& a : point) leaves.push_back(ad::constant(a));
  ad::KinkProbeScope scope;
  const ad::Var y = fn(leaves);
  if (!y || y->value.numel() != 1)
    throw ContractError("gradient_check: function must return a scalar");
  ProbedEval out;
  out.value = y->value.data[0];
  out.min_kink_distance = scope.probe().min_distance;
  out.branch_signature = scope.probe().branch_signature;
  out.observations = scope.probe().observations;
  return out;
}

}  // namespace

GradCheckResult gradient_check(
    const std::function<ad::Var(const std::vector<ad::Var>&)>& fn,
    const std::vector<DenseArray>& point, const GradCheckOptions& opt) {
  if (point.empty()) throw ContractError("gradient_check: no leaves given");

  // analytic pass
  std::vector<ad::Var> leaves;
  leaves.reserve(point.size());
  for (const DenseArray& a : point) leaves.push_back(ad::leaf(a, true));
  const ad::Var y = fn(leaves);
  if (!y || y->value.numel() != 1)
    throw ContractError("gradient_check: function must return a scalar");
  ad::backward(y);

  std::vector<DenseArray> analytic;
  analytic.reserve(leaves.size());
  for (const ad::Var& l : leaves) analytic.push_back(ad::grad_array(l));

  GradCheckResult result;
  std::vector<DenseArray> pt = point;
  for (std::size_t li = 0; li < pt.size(); ++li) {
    for (std::int64_t i = 0; i < pt[li].numel(); ++i) {
      double& coord = pt[li].data[static_cast<std::size_t>(i)];
      const double saved = coord;

      coord = saved + opt.step;
      const ProbedEval plus = eval_at(fn, pt);
      coord = saved - opt.step;
      const ProbedEval minus = eval_at(fn, pt);
      coord = saved;

      const double a = analytic[li].data[static_cast<std::size_t>(i)];
      GradCheckCoord c;
      c.leaf = li;
      c.index = i;
      c.analytic = a;

      const bool crossed = plus.branch_signature != minus.branch_signature ||
                           plus.observations != minus.observations;
      // A kink invalidates this coordinate's central difference only if the
      // half-steps can interact with it: either some unit changed branch
      // between the two evaluations, or the nearest kink sits inside the
      // tolerance AND moves with the perturbation. A near-zero distance that
      // is bit-identical under both half-steps comes from a unit this
      // coordinate does not feed (sparse activations park many units exactly
      // on a kink), so the difference is taken along a smooth path.
      const bool near_moving_kink =
          std::min(plus.min_kink_distance, minus.min_kink_distance) < opt.kink_tol &&
          plus.min_kink_distance != minus.min_kink_distance;
      if (crossed || near_moving_kink) {
        result.excluded.push_back(c);
        continue;
      }

      c.numeric = (plus.value - minus.value) / (2.0 * opt.step);
      const double denom = std::max({std::fabs(a), std::fabs(c.numeric), opt.denom_floor});
      c.rel_err = std::fabs(a - c.numeric) / denom;
      ++result.checked;
      if (c.rel_err > result.max_rel_err) {
        result.max_rel_err = c.rel_err;
        result.worst = c;
      }
    }
  }
  return result;
}

}  // namespace spn
