#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "spn/autodiff.hpp"
#include "spn/rng.hpp"

namespace spn {

using ad::Var;

// Ordered registry of trainable parameters. Registration order is the
// canonical order for optimizer state and checkpoints.
class ParamStore {
 public:
  std::size_t add(const std::string& name, DenseArray init);

  const Var& var(std::size_t i) const;
  Var named(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return vars_.size(); }
  std::size_t scalar_count() const;
  std::vector<Var> vars() const { return vars_; }

  // Swaps every parameter node for an externally supplied one of the same
  // shape; modules that fetch by index pick the new nodes up on the next
  // forward pass.
  void replace_all(const std::vector<Var>& vs);

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
  std::unordered_map<std::string, std::size_t> index_;
};

DenseArray uniform_init(Rng& rng, const std::vector<std::int64_t>& shape, double bound);

}  // namespace spn
