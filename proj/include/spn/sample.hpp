#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spn/dense_array.hpp"

namespace spn {

struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;
};

// One synthetic pedestrian scenario: an observation window with aligned
// multi-modal payloads plus the future window used as the prediction target.
struct Sample {
  std::int64_t id = 0;
  std::string split;
  std::vector<int> concepts;  // active concept ids, ascending
  int action = 0;

  DenseArray ctx;       // {3 + seg_classes, ctx_size, ctx_size}, values in [0,1]
  DenseArray pose_obs;  // {t_obs, 17, 2} pixel coordinates
  DenseArray traj_obs;  // {t_obs, 4} center-x, center-y, width, height
  DenseArray ego_obs;   // {t_obs, 1} ego acceleration
  DenseArray social;    // {k_nb, 4} nearest-neighbor relation rows, zero padded
  int neighbor_count = 0;

  DenseArray traj_fut;  // {t_pred, 4}
  DenseArray pose_fut;  // {t_pred, 17, 2}

  std::int64_t img_w = 0;
  std::int64_t img_h = 0;

  bool has_concept(int c) const {
    for (const int v : concepts)
      if (v == c) return true;
    return false;
  }
};

}  // namespace spn
