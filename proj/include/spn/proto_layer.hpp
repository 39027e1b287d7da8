#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spn/autodiff.hpp"
#include "spn/params.hpp"

namespace spn {

// Learned prototype bank. Matching an embedding batch against the bank gives
// the rectified inner products that form the model's explanation bottleneck:
// every downstream head sees only these activations.
class PrototypeBank {
 public:
  PrototypeBank(ParamStore& store, const std::string& prefix, int n_prototypes,
                int dim, Rng& rng);

  // embeddings {B, dim} -> activations {n_prototypes, B}
  Var activations(const Var& embeddings) const;

  Var prototypes() const { return store_->var(p_); }
  int count() const { return n_; }
  int dim() const { return dim_; }

 private:
  ParamStore* store_;
  int n_, dim_;
  std::size_t p_;
};

// Sum of per-modality activation maps, one feature row per sample: {B, N}.
Var aggregate_activations(const std::vector<Var>& per_modality);

// Concatenation instead of summation: {B, N * M}, modality-major blocks.
Var flatten_activations(const std::vector<Var>& per_modality);

// Zeroes the rows of dropped prototypes in an {N, B} activation map.
// `keep` lists the prototype ids that stay active; it may be empty.
Var mask_rows(const Var& activations, const std::vector<int>& keep);

// One pooled activation record used for prototype explanations.
struct PoolEntry {
  double activation = 0.0;
  std::int64_t sample_id = 0;
  int modality = 0;
};

// Top-k entries by activation, descending; ties resolved by ascending
// (sample_id, modality) so explanations are reproducible.
std::vector<PoolEntry> top_entries(std::vector<PoolEntry> pool, int k);

}  // namespace spn
