#include "spn/params.hpp"

#include "spn/errors.hpp"

namespace spn {

std::size_t ParamStore::add(const std::string& name, DenseArray init) {
  if (index_.count(name))
    throw ContractError("duplicate parameter name '" + name + "'");
  require_finite(init, name);
  const std::size_t i = vars_.size();
  names_.push_back(name);
  vars_.push_back(ad::leaf(std::move(init), true));
  index_[name] = i;
  return i;
}

const Var& ParamStore::var(std::size_t i) const {
  if (i >= vars_.size())
    throw RangeError("parameter index " + std::to_string(i) + " out of range");
  return vars_[i];
}

Var ParamStore::named(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw LookupError("no parameter named '" + name + "'");
  return vars_[it->second];
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const Var& v : vars_) n += v->value.data.size();
  return n;
}

void ParamStore::replace_all(const std::vector<Var>& vs) {
  if (vs.size() != vars_.size())
    throw ContractError("replace_all got " + std::to_string(vs.size()) +
                        " parameters, store holds " + std::to_string(vars_.size()));
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (vs[i]->value.shape != vars_[i]->value.shape)
      throw ContractError("replace_all shape mismatch at '" + names_[i] + "'");
  }
  vars_ = vs;
}

DenseArray uniform_init(Rng& rng, const std::vector<std::int64_t>& shape, double bound) {
  if (bound < 0.0) throw ConfigError("init bound must be non-negative");
  DenseArray out = DenseArray::zeros(shape);
  for (double& v : out.data) v = rng.uniform(-bound, bound);
  return out;
}

}  // namespace spn
