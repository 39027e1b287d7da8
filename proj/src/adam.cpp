#include "spn/adam.hpp"

#include <cmath>

namespace spn {

AdamState AdamState::init(const std::vector<std::int64_t>& shape, const AdamConfig& cfg) {
  AdamState st;
  st.m = DenseArray::zeros(shape);
  st.v = DenseArray::zeros(shape);
  st.step = 0;
  st.cfg = cfg;
  return st;
}

void adam_step(DenseArray& params, const DenseArray& grads, AdamState& state) {
  require_same_shape(params, grads, "adam_step");
  require_same_shape(params, state.m, "adam_step: state");
  require_finite(grads, "adam_step: gradients");

  state.step += 1;
  const AdamConfig& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.data.size(); ++i) {
    const double g = grads.data[i];
    state.m.data[i] = c.beta1 * state.m.data[i] + (1.0 - c.beta1) * g;
    state.v.data[i] = c.beta2 * state.v.data[i] + (1.0 - c.beta2) * g * g;
    const double mhat = state.m.data[i] / bc1;
    const double vhat = state.v.data[i] / bc2;
    params.data[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

}  // namespace spn
