#pragma once

#include <string>
#include <vector>

#include "spn/autodiff.hpp"
#include "spn/params.hpp"

namespace spn {

// Linear classifier over prototype activations (no bias, so an all-masked
// bottleneck yields exactly uniform class probabilities).
class ActionHead {
 public:
  ActionHead(ParamStore& store, const std::string& prefix, int in_dim,
             int n_actions, Rng& rng);

  Var logits(const Var& features) const;   // {B, in_dim} -> {B, n_actions}
  Var predict(const Var& features) const;  // softmax over logits

  int n_actions() const { return actions_; }

 private:
  ParamStore* store_;
  int in_dim_, actions_;
  std::size_t w_;
};

// Noise-conditioned residual decoder: a two-layer relu MLP over the
// bottleneck features and a noise draw, added to an anchor built from the
// last observed frame. Zero weights therefore reproduce the anchor exactly.
class GenerativeHead {
 public:
  GenerativeHead(ParamStore& store, const std::string& prefix, int in_dim,
                 int noise_dim, int hidden, int out_dim, Rng& rng);

  // features {B, in_dim}, noise {B, noise_dim}, anchor {B, out_dim}
  Var forward(const Var& features, const Var& noise, const Var& anchor) const;

  int out_dim() const { return out_dim_; }
  int noise_dim() const { return noise_dim_; }

 private:
  ParamStore* store_;
  int in_dim_, noise_dim_, hidden_, out_dim_;
  std::size_t w1_, b1_, w2_, b2_, w3_, b3_;
};

// Row-wise argmax with ties resolved toward the lowest index.
std::vector<int> argmax_rows(const DenseArray& scores);

}  // namespace spn
