#pragma once

#include <cstdint>

#include "spn/dense_array.hpp"

namespace spn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers for one parameter array.
struct AdamState {
  DenseArray m;
  DenseArray v;
  std::int64_t step = 0;
  AdamConfig cfg;

  static AdamState init(const std::vector<std::int64_t>& shape, const AdamConfig& cfg);
};

// One bias-corrected update, in place. Gradients must be finite and shaped
// like the parameters.
void adam_step(DenseArray& params, const DenseArray& grads, AdamState& state);

}  // namespace spn
