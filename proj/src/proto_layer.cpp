#include "spn/proto_layer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "spn/errors.hpp"

namespace spn {

namespace a = ad;

PrototypeBank::PrototypeBank(ParamStore& store, const std::string& prefix,
                             int n_prototypes, int dim, Rng& rng)
    : store_(&store), n_(n_prototypes), dim_(dim) {
  if (n_prototypes < 1 || dim < 1)
    throw ConfigError("prototype bank needs positive count and dim");
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  p_ = store.add(prefix + ".p", uniform_init(rng, {n_prototypes, dim}, bound));
}

Var PrototypeBank::activations(const Var& embeddings) const {
  require_rank2(embeddings->value, "embeddings");
  if (embeddings->value.cols() != dim_)
    throw ShapeError("embeddings must have " + std::to_string(dim_) +
                     " columns, got " + shape_str(embeddings->value.shape));
  return a::relu(a::matmul(store_->var(p_), a::transpose(embeddings)));
}

Var aggregate_activations(const std::vector<Var>& per_modality) {
  if (per_modality.empty()) throw ContractError("no activation maps to aggregate");
  Var total = per_modality[0];
  for (std::size_t m = 1; m < per_modality.size(); ++m)
    total = a::add(total, per_modality[m]);
  return a::transpose(total);
}

Var flatten_activations(const std::vector<Var>& per_modality) {
  if (per_modality.empty()) throw ContractError("no activation maps to flatten");
  std::vector<Var> cols;
  cols.reserve(per_modality.size());
  for (const Var& act : per_modality) cols.push_back(a::transpose(act));
  return a::concat_cols(cols);
}

Var mask_rows(const Var& activations, const std::vector<int>& keep) {
  require_rank2(activations->value, "activations");
  const std::int64_t n = activations->value.rows();
  std::set<int> seen;
  for (const int id : keep) {
    if (id < 0 || id >= n)
      throw RangeError("prototype id " + std::to_string(id) + " outside [0, " +
                       std::to_string(n) + ")");
    if (!seen.insert(id).second)
      throw ContractError("duplicate prototype id " + std::to_string(id));
  }
  DenseArray mask = DenseArray::zeros(activations->value.shape);
  const std::int64_t b = activations->value.cols();
  for (const int id : keep)
    for (std::int64_t c = 0; c < b; ++c) mask.at(id, c) = 1.0;
  return a::mul(activations, a::constant(std::move(mask)));
}

std::vector<PoolEntry> top_entries(std::vector<PoolEntry> pool, int k) {
  if (k < 1) throw RangeError("top_entries needs k >= 1, got " + std::to_string(k));
  if (static_cast<std::size_t>(k) > pool.size())
    throw RangeError("top_entries k=" + std::to_string(k) + " exceeds pool size " +
                     std::to_string(pool.size()));
  std::sort(pool.begin(), pool.end(), [](const PoolEntry& x, const PoolEntry& y) {
    if (x.activation != y.activation) return x.activation > y.activation;
    if (x.sample_id != y.sample_id) return x.sample_id < y.sample_id;
    return x.modality < y.modality;
  });
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

}  // namespace spn
