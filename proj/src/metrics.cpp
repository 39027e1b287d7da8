#include "spn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace spn {

TopKMsStats top_k_ms(std::span<const double> pool, int k) {
  const std::int64_t n = static_cast<std::int64_t>(pool.size());
  if (k < 1) throw RangeError("top_k_ms: k must be >= 1");
  if (n < std::max<std::int64_t>(k, 2))
    throw RangeError("top_k_ms: pool of " + std::to_string(n) + " values cannot support k=" +
                     std::to_string(k));

  TopKMsStats st;
  double sum = 0.0;
  for (const double v : pool) sum += v;
  st.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const double v : pool) ss += (v - st.mean) * (v - st.mean);
  st.variance = ss / static_cast<double>(n - 1);

  st.top_indices.resize(static_cast<std::size_t>(n));
  std::iota(st.top_indices.begin(), st.top_indices.end(), 0);
  std::stable_sort(st.top_indices.begin(), st.top_indices.end(),
                   [&pool](std::int64_t a, std::int64_t b) {
                     return pool[static_cast<std::size_t>(a)] > pool[static_cast<std::size_t>(b)];
                   });
  st.top_indices.resize(static_cast<std::size_t>(k));

  if (st.variance < 1e-12) {
    st.psi = 0.0;  // a flat pool carries no scale information
    return st;
  }
  double acc = 0.0;
  for (const std::int64_t idx : st.top_indices)
    acc += (pool[static_cast<std::size_t>(idx)] - st.mean) / st.variance;
  st.psi = acc / static_cast<double>(k);
  return st;
}

ClassificationMetrics classification_metrics(const std::vector<int>& predicted,
                                             const std::vector<int>& truth, int n_classes) {
  if (predicted.empty()) throw ContractError("classification_metrics: empty prediction list");
  if (predicted.size() != truth.size())
    throw ContractError("classification_metrics: length mismatch, " +
                        std::to_string(predicted.size()) + " vs " + std::to_string(truth.size()));
  if (n_classes < 2) throw ContractError("classification_metrics: need at least 2 classes");
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] < 0 || predicted[i] >= n_classes || truth[i] < 0 || truth[i] >= n_classes)
      throw ContractError("classification_metrics: label outside [0, n_classes)");

  const double n = static_cast<double>(predicted.size());
  std::int64_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == truth[i]) ++correct;

  const auto class_f1 = [&](int cls) {
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const bool p = predicted[i] == cls, t = truth[i] == cls;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    if (tp == 0) return 0.0;
    const double prec = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double rec = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * prec * rec / (prec + rec);
  };

  ClassificationMetrics m;
  m.accuracy = static_cast<double>(correct) / n;
  if (n_classes == 2) {
    m.f1 = class_f1(1);  // class 1 is the positive class by convention
  } else {
    double s = 0.0;
    for (int c = 0; c < n_classes; ++c) s += class_f1(c);
    m.f1 = s / static_cast<double>(n_classes);
  }
  return m;
}

double normalized_mse(const DenseArray& pred, const DenseArray& truth, std::int64_t img_w,
                      std::int64_t img_h) {
  require_same_shape(pred, truth, "normalized_mse");
  if (img_w <= 0 || img_h <= 0) throw ConfigError("normalized_mse: image extents must be positive");
  const std::int64_t cols = pred.shape.back();
  const double w = static_cast<double>(img_w), h = static_cast<double>(img_h);
  double acc = 0.0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    const double norm = (i % cols) % 2 == 0 ? w : h;
    const double d = (pred.data[static_cast<std::size_t>(i)] - truth.data[static_cast<std::size_t>(i)]) / norm;
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

double concept_purity(const std::vector<std::vector<int>>& concept_sets, int n_concepts) {
  if (concept_sets.empty()) throw ContractError("concept_purity: no entries");
  if (n_concepts < 1) throw ContractError("concept_purity: need at least one concept");
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_concepts), 0);
  for (const std::vector<int>& set : concept_sets)
    for (const int c : set) {
      if (c < 0 || c >= n_concepts) throw ContractError("concept_purity: concept id out of range");
      ++counts[static_cast<std::size_t>(c)];
    }
  const std::int64_t best = *std::max_element(counts.begin(), counts.end());
  return static_cast<double>(best) / static_cast<double>(concept_sets.size());
}

std::string eval_report_json(const EvalReport& r) {
  nlohmann::json j;
  j["split"] = r.split;
  j["n_samples"] = r.n_samples;
  j["accuracy"] = r.accuracy;
  j["f1"] = r.f1;
  j["traj_mse"] = r.traj_mse;
  j["pose_mse"] = r.pose_mse;
  j["baseline_traj_mse"] = r.baseline_traj_mse;
  j["baseline_pose_mse"] = r.baseline_pose_mse;
  j["mean_topk_ms"] = r.mean_topk_ms;
  j["proto_psi"] = r.proto_psi;
  j["proto_purity"] = r.proto_purity;
  return j.dump(2) + "\n";
}

}  // namespace spn
