#pragma once

#include <string>
#include <vector>

#include "spn/autodiff.hpp"
#include "spn/params.hpp"
#include "spn/sample.hpp"

namespace spn {

using ad::Var;

// Single-block multi-head self-attention encoder over a short feature
// sequence. Produces one pooled feature row per sequence.
class AttentionEncoder {
 public:
  AttentionEncoder(ParamStore& store, const std::string& prefix, int seq_len,
                   int feat_dim, int width, int heads, Rng& rng);

  // x: {seq_len, feat_dim} -> {1, width}
  Var forward(const Var& x) const;
  int out_dim() const { return width_; }

 private:
  ParamStore* store_;
  int seq_len_, feat_dim_, width_, heads_;
  std::size_t w_in_, b_in_, pos_, wq_, wk_, wv_, wo_;
};

// Three stage conv encoder: each stage is 3x3 conv (pad 1) + relu + 2x2
// average pooling; channels run base, 2*base, 2*base; global average
// pooling at the end.
class ConvEncoder {
 public:
  ConvEncoder(ParamStore& store, const std::string& prefix, int in_channels,
              int size, int base_channels, Rng& rng);

  // x: {in_channels, size, size} -> {1, 2*base_channels}
  Var forward(const Var& x) const;
  int out_dim() const { return 2 * base_; }

 private:
  ParamStore* store_;
  int in_ch_, size_, base_;
  std::size_t w1_, b1_, w2_, b2_, w3_, b3_;
};

// Sample payloads flattened and scaled into encoder-friendly constants.
inline constexpr int kModalityCount = 5;
const char* modality_name(int m);  // ctx, pose, traj, ego, social

DenseArray ctx_features(const Sample& s);     // {3+seg, S, S}, already in [0,1]
DenseArray pose_features(const Sample& s);    // {t_obs, joints*2}, image-normalized
DenseArray traj_features(const Sample& s);    // {t_obs, 4}, image-normalized
DenseArray ego_features(const Sample& s);     // {t_obs, 1}, scaled by 1/5
DenseArray social_features(const Sample& s);  // {k_nb, 4}, scaled by 1/5

}  // namespace spn
