#pragma once

#include <vector>

#include "spn/autodiff.hpp"

namespace spn {

using ad::Var;

// Cross-modal contrastive clustering pull. For every ordered modality pair
// (m, n) and sample i, the embedding e_mi scores all same-batch embeddings
// e_nj; the loss is the mean negative log-probability that the matching
// sample j = i wins, at the given softmax temperature, averaged with weight
// 1 / (B * M^2). A batch of one is a perfect win by default and scores 0.
Var clustering_loss(const std::vector<Var>& embeddings, double temperature);

// Mean absolute value over all prototype activation entries of all
// modalities ({N, B} maps).
Var l1_sparsity(const std::vector<Var>& activations);

// Mean negative log-likelihood of the labels under the given row-stochastic
// probabilities; probabilities are floored at 1e-12 before the log.
Var cross_entropy(const Var& probs, const std::vector<int>& labels);

// Mean squared difference between two equally shaped batches.
Var sequence_mse(const Var& pred, const Var& target);

struct LossTerms {
  Var clustering;
  Var l1;
  Var action_ce;
  Var traj_mse;
  Var pose_mse;
};

struct LossWeights {
  double lambda_cluster = 0.001;
  double lambda_l1 = 0.01;
  double w_action = 1.0;
  double w_traj = 1.0;
  double w_pose = 1.0;
};

// Weighted sum of the five terms; every term must be a finite scalar.
Var total_loss(const LossTerms& terms, const LossWeights& w);

}  // namespace spn
