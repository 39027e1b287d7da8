#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spn/dense_array.hpp"

namespace spn {

// Top-K mono-semanticity scale of one activation pool: the mean deviation of
// the K largest activations from the pool mean, measured against the unbiased
// pool variance. Degenerate (near-constant) pools score 0.
struct TopKMsStats {
  double psi = 0.0;
  double mean = 0.0;
  double variance = 0.0;                 // unbiased, divisor pool-size - 1
  std::vector<std::int64_t> top_indices; // descending by value, K entries
};
TopKMsStats top_k_ms(std::span<const double> pool, int k);

struct ClassificationMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;  // positive-class F1 for 2 classes, macro-averaged otherwise
};
ClassificationMetrics classification_metrics(const std::vector<int>& predicted,
                                             const std::vector<int>& truth, int n_classes);

// Mean squared error after dividing x-like coordinates (even columns of the
// flattened last axis) by image width and y-like ones by height.
double normalized_mse(const DenseArray& pred, const DenseArray& truth, std::int64_t img_w,
                      std::int64_t img_h);

// Fraction of entries sharing the most common concept. Each element of
// `concept_sets` lists the active concept ids of one top-activating entry.
double concept_purity(const std::vector<std::vector<int>>& concept_sets, int n_concepts);

struct EvalReport {
  std::string split;
  std::int64_t n_samples = 0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double traj_mse = 0.0;
  double pose_mse = 0.0;
  double baseline_traj_mse = 0.0;  // copy-last-frame reference
  double baseline_pose_mse = 0.0;
  double mean_topk_ms = 0.0;
  std::vector<double> proto_psi;
  std::vector<double> proto_purity;
};

std::string eval_report_json(const EvalReport& r);

}  // namespace spn
