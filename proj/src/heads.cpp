#include "spn/heads.hpp"

#include <cmath>

#include "spn/errors.hpp"

namespace spn {

namespace a = ad;

ActionHead::ActionHead(ParamStore& store, const std::string& prefix, int in_dim,
                       int n_actions, Rng& rng)
    : store_(&store), in_dim_(in_dim), actions_(n_actions) {
  if (in_dim < 1 || n_actions < 2)
    throw ConfigError("action head needs in_dim >= 1 and n_actions >= 2");
  // Wider than 1/sqrt(fan-in): bottleneck activations start small, and the
  // classifier needs informative logits from the first steps to avoid a long
  // uniform-softmax plateau.
  const double bound = 4.0 / std::sqrt(static_cast<double>(in_dim));
  w_ = store.add(prefix + ".w", uniform_init(rng, {in_dim, n_actions}, bound));
}

Var ActionHead::logits(const Var& features) const {
  require_rank2(features->value, "action features");
  if (features->value.cols() != in_dim_)
    throw ShapeError("action head expects " + std::to_string(in_dim_) +
                     " feature columns, got " + shape_str(features->value.shape));
  return a::matmul(features, store_->var(w_));
}

Var ActionHead::predict(const Var& features) const {
  return a::softmax_rows(logits(features));
}

GenerativeHead::GenerativeHead(ParamStore& store, const std::string& prefix,
                               int in_dim, int noise_dim, int hidden, int out_dim,
                               Rng& rng)
    : store_(&store), in_dim_(in_dim), noise_dim_(noise_dim), hidden_(hidden),
      out_dim_(out_dim) {
  if (in_dim < 1 || noise_dim < 1 || hidden < 1 || out_dim < 1)
    throw ConfigError("generative head dims must be positive");
  const int joint = in_dim + noise_dim;
  auto bound = [](int fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  w1_ = store.add(prefix + ".w1", uniform_init(rng, {joint, hidden}, bound(joint)));
  b1_ = store.add(prefix + ".b1", uniform_init(rng, {1, hidden}, bound(joint)));
  w2_ = store.add(prefix + ".w2", uniform_init(rng, {hidden, hidden}, bound(hidden)));
  b2_ = store.add(prefix + ".b2", uniform_init(rng, {1, hidden}, bound(hidden)));
  w3_ = store.add(prefix + ".w3", uniform_init(rng, {hidden, out_dim}, bound(hidden)));
  b3_ = store.add(prefix + ".b3", uniform_init(rng, {1, out_dim}, bound(hidden)));
}

Var GenerativeHead::forward(const Var& features, const Var& noise,
                            const Var& anchor) const {
  require_rank2(features->value, "generative features");
  require_rank2(noise->value, "noise");
  require_rank2(anchor->value, "anchor");
  const std::int64_t b = features->value.rows();
  if (features->value.cols() != in_dim_)
    throw ShapeError("generative head expects " + std::to_string(in_dim_) +
                     " feature columns, got " + shape_str(features->value.shape));
  if (noise->value.rows() != b || noise->value.cols() != noise_dim_)
    throw ShapeError("noise must be {" + std::to_string(b) + ", " +
                     std::to_string(noise_dim_) + "}, got " +
                     shape_str(noise->value.shape));
  if (anchor->value.rows() != b || anchor->value.cols() != out_dim_)
    throw ShapeError("anchor must be {" + std::to_string(b) + ", " +
                     std::to_string(out_dim_) + "}, got " +
                     shape_str(anchor->value.shape));

  const Var joint = a::concat_cols({features, noise});
  const Var h1 = a::relu(a::add_rowvec(a::matmul(joint, store_->var(w1_)),
                                       store_->var(b1_)));
  const Var h2 = a::relu(a::add_rowvec(a::matmul(h1, store_->var(w2_)),
                                       store_->var(b2_)));
  const Var res = a::add_rowvec(a::matmul(h2, store_->var(w3_)), store_->var(b3_));
  return a::add(res, anchor);
}

std::vector<int> argmax_rows(const DenseArray& scores) {
  require_rank2(scores, "scores");
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (std::int64_t r = 0; r < scores.rows(); ++r) {
    int best = 0;
    for (std::int64_t c = 1; c < scores.cols(); ++c)
      if (scores.at(r, c) > scores.at(r, best)) best = static_cast<int>(c);
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

}  // namespace spn
