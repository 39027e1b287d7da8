#include "spn/losses.hpp"

#include "spn/errors.hpp"

namespace spn {

namespace a = ad;

Var clustering_loss(const std::vector<Var>& embeddings, double temperature) {
  if (embeddings.empty()) throw ContractError("clustering loss needs embeddings");
  if (!(temperature > 0.0))
    throw ConfigError("temperature must be positive, got " +
                      std::to_string(temperature));
  const std::int64_t mods = static_cast<std::int64_t>(embeddings.size());
  require_rank2(embeddings[0]->value, "embeddings");
  const std::int64_t b = embeddings[0]->value.rows();
  for (const Var& e : embeddings) {
    require_rank2(e->value, "embeddings");
    if (e->value.shape != embeddings[0]->value.shape)
      throw ShapeError("all modality embeddings must share one shape");
  }
  if (b == 1) return a::constant(DenseArray::scalar(0.0));

  // Rows stacked modality-major: row m*B + i holds e_mi. The Gram matrix row
  // for e_mi then splits into M contiguous blocks of B scores, one per
  // opposing modality, which a reshape turns into softmax groups.
  const Var stacked = a::concat_rows(embeddings);
  const Var scores = a::scale(a::matmul(stacked, a::transpose(stacked)),
                              1.0 / temperature);
  const Var groups = a::reshape(scores, {mods * b * mods, b});
  const Var logp = a::log_softmax_rows(groups);

  DenseArray pick = DenseArray::zeros({mods * b * mods, b});
  for (std::int64_t m = 0; m < mods; ++m)
    for (std::int64_t i = 0; i < b; ++i)
      for (std::int64_t n = 0; n < mods; ++n)
        pick.at((m * b + i) * mods + n, i) = 1.0;

  const Var matched = a::sum_all(a::mul(logp, a::constant(std::move(pick))));
  return a::scale(matched, -1.0 / static_cast<double>(b * mods * mods));
}

Var l1_sparsity(const std::vector<Var>& activations) {
  if (activations.empty()) throw ContractError("l1 sparsity needs activations");
  for (const Var& act : activations) {
    require_rank2(act->value, "activations");
    if (act->value.shape != activations[0]->value.shape)
      throw ShapeError("all activation maps must share one shape");
  }
  const Var all = activations.size() == 1 ? activations[0]
                                          : a::concat_rows(activations);
  return a::mean_all(a::abs(all));
}

Var cross_entropy(const Var& probs, const std::vector<int>& labels) {
  require_rank2(probs->value, "probabilities");
  const std::int64_t b = probs->value.rows();
  const std::int64_t classes = probs->value.cols();
  if (static_cast<std::int64_t>(labels.size()) != b)
    throw ContractError("got " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(b) + " rows");
  DenseArray onehot = DenseArray::zeros(probs->value.shape);
  for (std::int64_t i = 0; i < b; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= classes)
      throw RangeError("label " + std::to_string(y) + " outside [0, " +
                       std::to_string(classes) + ")");
    onehot.at(i, y) = 1.0;
  }
  const Var picked = a::sum_rows(a::mul(probs, a::constant(std::move(onehot))));
  const Var logp = a::log(a::clamp_min(picked, 1e-12));
  return a::scale(a::sum_all(logp), -1.0 / static_cast<double>(b));
}

Var sequence_mse(const Var& pred, const Var& target) {
  require_same_shape(pred->value, target->value, "sequence mse");
  const Var d = a::sub(pred, target);
  return a::mean_all(a::mul(d, d));
}

Var total_loss(const LossTerms& terms, const LossWeights& w) {
  const std::vector<std::pair<const Var*, double>> parts = {
      {&terms.clustering, w.lambda_cluster},
      {&terms.l1, w.lambda_l1},
      {&terms.action_ce, w.w_action},
      {&terms.traj_mse, w.w_traj},
      {&terms.pose_mse, w.w_pose},
  };
  Var total;
  for (const auto& [term, weight] : parts) {
    if (!*term) throw ContractError("total loss has an unset term");
    if ((*term)->value.data.size() != 1)
      throw ShapeError("loss terms must be scalars");
    require_finite((*term)->value, "loss term");
    const Var scaled = a::scale(*term, weight);
    total = total ? a::add(total, scaled) : scaled;
  }
  return total;
}

}  // namespace spn
