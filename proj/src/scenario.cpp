#include "spn/scenario.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spn/errors.hpp"
#include "spn/rng.hpp"

namespace spn {
namespace {

constexpr double kPi = std::numbers::pi;

double quantize(double v, double grid) { return std::round(v * grid) / grid; }

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

// 17-joint skeleton template: offsets as fractions of the box height.
struct JointSpec {
  double fx, fy;
  bool swing;  // oscillates with gait
  bool leg;    // legs swing in counter-phase to arms
  double amp_scale;
};

constexpr JointSpec kJoints[17] = {
    {0.00, -0.42, false, false, 0.0},   // nose
    {0.02, -0.45, false, false, 0.0},   // left eye
    {-0.02, -0.45, false, false, 0.0},  // right eye
    {0.05, -0.43, false, false, 0.0},   // left ear
    {-0.05, -0.43, false, false, 0.0},  // right ear
    {0.10, -0.28, false, false, 0.0},   // left shoulder
    {-0.10, -0.28, false, false, 0.0},  // right shoulder
    {0.13, -0.12, true, false, 0.5},    // left elbow
    {-0.13, -0.12, true, false, 0.5},   // right elbow
    {0.15, 0.02, true, false, 1.0},     // left wrist
    {-0.15, 0.02, true, false, 1.0},    // right wrist
    {0.07, 0.02, false, false, 0.0},    // left hip
    {-0.07, 0.02, false, false, 0.0},   // right hip
    {0.08, 0.22, true, true, 0.5},      // left knee
    {-0.08, 0.22, true, true, 0.5},     // right knee
    {0.08, 0.42, true, true, 1.0},      // left ankle
    {-0.08, 0.42, true, true, 1.0},     // right ankle
};

bool joint_is_left(int j) { return j == 0 ? false : (j % 2 == 1); }

// Picks a point at `dist` from `from` along a random direction that stays
// inside the image margins. The quarter-turn rotations cover all four
// offset sign patterns, and for the distances this generator draws at least
// one pattern is always in bounds.
void place_at_distance(Rng& rng, double fx, double fy, double dist, double img_w,
                       double img_h, double margin, double& ox, double& oy) {
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  for (const double a : {phi, phi + 0.5 * kPi, phi + kPi, phi + 1.5 * kPi}) {
    const double x = fx + dist * std::cos(a);
    const double y = fy + dist * std::sin(a);
    if (x >= margin && x <= img_w - margin && y >= margin && y <= img_h - margin) {
      ox = x;
      oy = y;
      return;
    }
  }
  throw ContractError("no in-bounds placement at distance " + std::to_string(dist));
}

}  // namespace

const std::vector<ConceptInfo>& concept_roster() {
  static const std::vector<ConceptInfo> roster = {
      {kConceptCrosswalk, "crosswalk", "crosswalk band width in the context raster"},
      {kConceptEgoBraking, "ego_braking", "magnitude of the ego deceleration ramp"},
      {kConceptCrossingMotion, "crossing_motion", "lateral speed across the road axis"},
      {kConceptFastGait, "fast_gait", "gait oscillation frequency"},
      {kConceptApproachingNb, "approaching_neighbor",
       "closing speed and final proximity of the nearest neighbor"},
      {kConceptNearCurb, "near_curb", "start distance to the near curb"},
      {kConceptShadowBand, "shadow_band", "darkening factor over a context row band"},
      {kConceptStationary, "stationary", "walking speed along the road axis"},
  };
  return roster;
}

int action_from_concepts(const std::array<bool, 8>& active) {
  if (active[kConceptCrossingMotion]) return kActionCross;
  if (active[kConceptStationary]) return kActionStand;
  return kActionWalk;
}

ScenarioParams derive_params(const GeneratorConfig& cfg, std::uint64_t sample_seed,
                             std::int64_t id) {
  Rng rng(sample_seed);
  ScenarioParams p;

  // Action first; the two motion concepts follow from it so the action label
  // stays a deterministic function of the active concept set.
  const double u = rng.uniform();
  if (u < cfg.p_cross)
    p.action = kActionCross;
  else if (u < cfg.p_cross + cfg.p_stand)
    p.action = kActionStand;
  else
    p.action = kActionWalk;
  p.active[kConceptCrossingMotion] = p.action == kActionCross;
  p.active[kConceptStationary] = p.action == kActionStand;

  for (const int c : {kConceptCrosswalk, kConceptEgoBraking, kConceptFastGait,
                      kConceptApproachingNb, kConceptNearCurb, kConceptShadowBand})
    p.active[c] = rng.bernoulli(cfg.p_concept);

  bool any = false;
  for (const bool b : p.active) any = any || b;
  if (!any) {
    static constexpr int fallback[6] = {kConceptCrosswalk, kConceptEgoBraking,
                                        kConceptFastGait, kConceptApproachingNb,
                                        kConceptNearCurb, kConceptShadowBand};
    p.active[fallback[static_cast<int>(((id % 6) + 6) % 6)]] = true;
  }

  // Scene layout: a horizontal road band; the pedestrian starts on one of the
  // sidewalks at a concept-controlled distance from the near curb.
  p.road_center = rng.uniform(230.0, 290.0);
  p.road_half = rng.uniform(70.0, 85.0);
  p.curb_side = rng.bernoulli(0.5) ? 1.0 : -1.0;
  p.curb_distance = p.active[kConceptNearCurb] ? rng.uniform(5.0, 20.0)
                                               : rng.uniform(80.0, 100.0);
  p.x0 = rng.uniform(120.0, 392.0);
  p.y0 = p.road_center - p.curb_side * (p.road_half + p.curb_distance);

  // Post-switch velocity carries the motion concepts; the longitudinal and
  // lateral components are driven by disjoint concepts.
  if (p.active[kConceptStationary]) {
    p.vx2 = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.0, 0.08);
  } else {
    p.vx2 = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(1.2, 2.4);
  }
  if (p.active[kConceptCrossingMotion]) {
    // Tight speed band: a crosser's future drift is then nearly determined by
    // class and side, so learners are rewarded for reading both.
    p.vy2 = p.curb_side * rng.uniform(2.6, 3.0);
  } else {
    p.vy2 = clamp(rng.normal() * 0.08, -0.25, 0.25);
  }
  p.vx1 = p.vx2 + clamp(rng.normal() * 0.15, -0.45, 0.45);
  p.vy1 = p.vy2 + clamp(rng.normal() * 0.15, -0.45, 0.45);
  p.switch_frame = cfg.t_obs / 2;

  p.gait_freq = p.active[kConceptFastGait] ? rng.uniform(1.1, 1.5)
                                           : rng.uniform(0.3, 0.6);
  p.gait_amp = p.active[kConceptStationary] ? rng.uniform(0.5, 1.5)
                                            : rng.uniform(4.0, 8.0);
  p.gait_phase = rng.uniform(0.0, 2.0 * kPi);

  // Apparent body shape tracks the action: crossers are seen in profile
  // (narrow box, tucked stance), walkers mid-stride (wide box, open stance),
  // standers in between. This plants class evidence in time-averaged
  // appearance, not just in frame-to-frame motion.
  p.bbox_h = rng.uniform(64.0, 90.0);
  double aspect = 0.0;
  if (p.action == kActionCross) {
    aspect = rng.uniform(0.26, 0.34);
    p.stance = rng.uniform(0.40, 0.50);
  } else if (p.action == kActionStand) {
    aspect = rng.uniform(0.44, 0.52);
    p.stance = rng.uniform(0.65, 0.75);
  } else {
    aspect = rng.uniform(0.62, 0.70);
    p.stance = rng.uniform(1.00, 1.15);
  }
  p.bbox_w = p.bbox_h * aspect;

  p.ego_decel = p.active[kConceptEgoBraking] ? rng.uniform(1.5, 2.5) : 0.0;

  // Neighbors: random bystanders stay far away; an approaching neighbor ends
  // the observation window close to the target.
  p.n_neighbors = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.k_nb) + 1));
  if (p.active[kConceptApproachingNb]) {
    p.approach_rate = rng.uniform(2.5, 4.0);
    p.n_neighbors = std::max(p.n_neighbors, 1);
  }
  const int last_obs = cfg.t_obs - 1;
  const double fx = p.x0 + p.vx1 * std::min(last_obs, p.switch_frame) +
                    p.vx2 * std::max(0, last_obs - p.switch_frame);
  const double fy = p.y0 + p.vy1 * std::min(last_obs, p.switch_frame) +
                    p.vy2 * std::max(0, last_obs - p.switch_frame);
  for (int n = 0; n < p.n_neighbors; ++n) {
    NeighborTrack nb;
    nb.w = rng.uniform(26.0, 42.0);
    nb.h = rng.uniform(60.0, 92.0);
    if (n == 0 && p.active[kConceptApproachingNb]) {
      double gx = 0.0, gy = 0.0;
      place_at_distance(rng, fx, fy, rng.uniform(30.0, 70.0),
                        static_cast<double>(cfg.img_w),
                        static_cast<double>(cfg.img_h), 10.0, gx, gy);
      const double psi = rng.uniform(0.0, 2.0 * kPi);
      nb.vx = p.approach_rate * std::cos(psi);
      nb.vy = p.approach_rate * std::sin(psi);
      nb.x0 = gx - nb.vx * last_obs;
      nb.y0 = gy - nb.vy * last_obs;
    } else {
      place_at_distance(rng, p.x0, p.y0, rng.uniform(150.0, 230.0),
                        static_cast<double>(cfg.img_w),
                        static_cast<double>(cfg.img_h), 10.0, nb.x0, nb.y0);
      nb.vx = rng.uniform(-1.0, 1.0);
      nb.vy = rng.uniform(-1.0, 1.0);
    }
    p.neighbors.push_back(nb);
  }

  if (p.active[kConceptCrosswalk]) {
    p.crosswalk_cols = 6 + static_cast<int>(rng.below(5));  // 6..10 cells
    p.crosswalk_center = p.x0 + rng.uniform(-40.0, 40.0);
  }
  if (p.active[kConceptShadowBand]) {
    p.shadow_strength = rng.uniform(0.35, 0.55);
    p.shadow_row0 = static_cast<int>(rng.below(18));
    p.shadow_rows = 8 + static_cast<int>(rng.below(7));  // 8..14 rows
  }

  p.noise_seed = rng.next_u64();
  return p;
}

Sample render_sample(const GeneratorConfig& cfg, const ScenarioParams& p,
                     std::int64_t id, const std::string& split) {
  const int t_total = cfg.t_obs + cfg.t_pred;
  const double img_w = static_cast<double>(cfg.img_w);
  const double img_h = static_cast<double>(cfg.img_h);

  Sample s;
  s.id = id;
  s.split = split;
  s.action = p.action;
  s.img_w = cfg.img_w;
  s.img_h = cfg.img_h;
  for (int c = 0; c < cfg.n_concepts; ++c)
    if (p.active[static_cast<std::size_t>(c)]) s.concepts.push_back(c);

  // Clean center track: piecewise-constant velocity with the switch inside
  // the observation window, so the future continues the post-switch motion.
  std::vector<double> cx(static_cast<std::size_t>(t_total));
  std::vector<double> cy(static_cast<std::size_t>(t_total));
  cx[0] = p.x0;
  cy[0] = p.y0;
  for (int t = 1; t < t_total; ++t) {
    const bool pre = (t - 1) < p.switch_frame;
    cx[static_cast<std::size_t>(t)] =
        cx[static_cast<std::size_t>(t - 1)] + (pre ? p.vx1 : p.vx2);
    cy[static_cast<std::size_t>(t)] =
        cy[static_cast<std::size_t>(t - 1)] + (pre ? p.vy1 : p.vy2);
  }

  Rng traj_rng(mix_seed(p.noise_seed, 1));
  DenseArray traj_all = DenseArray::zeros({t_total, 4});
  for (int t = 0; t < t_total; ++t) {
    const std::size_t st = static_cast<std::size_t>(t);
    const double ncx = clamp(cx[st] + traj_rng.normal() * cfg.sigma_traj, 0.0, img_w);
    const double ncy = clamp(cy[st] + traj_rng.normal() * cfg.sigma_traj, 0.0, img_h);
    const double nw = std::max(5.0, p.bbox_w + traj_rng.normal() * 0.5);
    const double nh = std::max(5.0, p.bbox_h + traj_rng.normal() * 0.5);
    traj_all.data[st * 4 + 0] = quantize(ncx, 1000.0);
    traj_all.data[st * 4 + 1] = quantize(ncy, 1000.0);
    traj_all.data[st * 4 + 2] = quantize(nw, 1000.0);
    traj_all.data[st * 4 + 3] = quantize(nh, 1000.0);
  }

  Rng pose_rng(mix_seed(p.noise_seed, 2));
  DenseArray pose_all = DenseArray::zeros({t_total, cfg.n_joints, 2});
  for (int t = 0; t < t_total; ++t) {
    const std::size_t st = static_cast<std::size_t>(t);
    const double bx = traj_all.data[st * 4 + 0];
    const double by = traj_all.data[st * 4 + 1];
    const double bh = traj_all.data[st * 4 + 3];
    for (int j = 0; j < cfg.n_joints; ++j) {
      const JointSpec& js = kJoints[j];
      double jx = bx + js.fx * p.stance * bh;
      const double jy = by + js.fy * bh;
      if (js.swing) {
        const double phase = p.gait_phase + (joint_is_left(j) ? 0.0 : kPi) +
                             (js.leg ? kPi : 0.0);
        jx += js.amp_scale * p.gait_amp * std::sin(p.gait_freq * t + phase);
      }
      const std::size_t base = (st * static_cast<std::size_t>(cfg.n_joints) +
                                static_cast<std::size_t>(j)) * 2;
      pose_all.data[base + 0] =
          quantize(jx + pose_rng.normal() * cfg.sigma_pose, 1000.0);
      pose_all.data[base + 1] =
          quantize(jy + pose_rng.normal() * cfg.sigma_pose, 1000.0);
    }
  }

  auto take_frames = [](const DenseArray& all, int from, int count) {
    std::vector<std::int64_t> shape = all.shape;
    shape[0] = count;
    std::size_t stride = 1;
    for (std::size_t d = 1; d < all.shape.size(); ++d)
      stride *= static_cast<std::size_t>(all.shape[d]);
    DenseArray out(shape, std::vector<double>(static_cast<std::size_t>(count) * stride));
    std::copy_n(all.data.begin() + static_cast<std::ptrdiff_t>(
                                       static_cast<std::size_t>(from) * stride),
                static_cast<std::size_t>(count) * stride, out.data.begin());
    return out;
  };
  s.traj_obs = take_frames(traj_all, 0, cfg.t_obs);
  s.traj_fut = take_frames(traj_all, cfg.t_obs, cfg.t_pred);
  s.pose_obs = take_frames(pose_all, 0, cfg.t_obs);
  s.pose_fut = take_frames(pose_all, cfg.t_obs, cfg.t_pred);

  Rng ego_rng(mix_seed(p.noise_seed, 3));
  s.ego_obs = DenseArray::zeros({cfg.t_obs, 1});
  for (int t = 0; t < cfg.t_obs; ++t) {
    double a = ego_rng.normal() * (p.ego_decel > 0.0 ? cfg.sigma_ego : 0.08);
    if (p.ego_decel > 0.0)
      a -= p.ego_decel * static_cast<double>(t + 1) / static_cast<double>(cfg.t_obs);
    s.ego_obs.data[static_cast<std::size_t>(t)] = quantize(a, 10000.0);
  }

  // Neighbor boxes at the last observed frame feed the social relation rows.
  Rng nb_rng(mix_seed(p.noise_seed, 4));
  const int last_obs = cfg.t_obs - 1;
  std::vector<BoundingBox> nb_boxes;
  for (const NeighborTrack& nb : p.neighbors) {
    BoundingBox b;
    b.cx = quantize(clamp(nb.x0 + nb.vx * last_obs + nb_rng.normal() * cfg.sigma_traj,
                          0.0, img_w), 1000.0);
    b.cy = quantize(clamp(nb.y0 + nb.vy * last_obs + nb_rng.normal() * cfg.sigma_traj,
                          0.0, img_h), 1000.0);
    b.w = quantize(std::max(5.0, nb.w + nb_rng.normal() * 0.5), 1000.0);
    b.h = quantize(std::max(5.0, nb.h + nb_rng.normal() * 0.5), 1000.0);
    nb_boxes.push_back(b);
  }
  s.neighbor_count = static_cast<int>(nb_boxes.size());
  const std::size_t last = static_cast<std::size_t>(last_obs) * 4;
  BoundingBox target{s.traj_obs.data[last + 0], s.traj_obs.data[last + 1],
                     s.traj_obs.data[last + 2], s.traj_obs.data[last + 3]};
  s.social = encode_social_relation(target, nb_boxes, cfg.k_nb);

  // Context raster: a 256x256 px top-down patch centered on the start
  // position, 8 px per cell. Channels: RGB then one-hot class planes.
  Rng ctx_rng(mix_seed(p.noise_seed, 5));
  const int cs = cfg.ctx_size;
  const int channels = 3 + cfg.seg_classes;
  s.ctx = DenseArray::zeros({channels, cs, cs});
  const double px_per_cell = 256.0 / static_cast<double>(cs);
  auto at = [&](int c, int r, int col) -> double& {
    return s.ctx.data[(static_cast<std::size_t>(c) * static_cast<std::size_t>(cs) +
                       static_cast<std::size_t>(r)) * static_cast<std::size_t>(cs) +
                      static_cast<std::size_t>(col)];
  };
  for (int r = 0; r < cs; ++r) {
    const double wy = p.y0 - 128.0 + (r + 0.5) * px_per_cell;
    for (int col = 0; col < cs; ++col) {
      const double wx = p.x0 - 128.0 + (col + 0.5) * px_per_cell;
      int cls = 3;  // other
      double cr = 0.22, cg = 0.38, cb = 0.20;
      const double dy = std::abs(wy - p.road_center);
      if (dy <= p.road_half) {
        cls = 0;
        cr = 0.30; cg = 0.30; cb = 0.32;
        if (p.crosswalk_cols > 0 &&
            std::abs(wx - p.crosswalk_center) <=
                0.5 * p.crosswalk_cols * px_per_cell) {
          cls = 2;
          const long stripe =
              ((static_cast<long>(std::floor(wx / 8.0)) % 2) + 2) % 2;
          if (stripe == 0) { cr = 0.85; cg = 0.85; cb = 0.82; }
          else { cr = 0.35; cg = 0.35; cb = 0.37; }
        }
      } else if (dy <= p.road_half + 30.0) {
        cls = 1;
        cr = 0.55; cg = 0.53; cb = 0.50;
      }
      double shade = 1.0;
      if (p.shadow_strength > 0.0 && r >= p.shadow_row0 &&
          r < p.shadow_row0 + p.shadow_rows)
        shade = 1.0 - p.shadow_strength;
      const double rgb[3] = {cr * shade, cg * shade, cb * shade};
      for (int c = 0; c < 3; ++c)
        at(c, r, col) = quantize(
            clamp(rgb[c] + ctx_rng.uniform(-cfg.sigma_ctx, cfg.sigma_ctx), 0.0, 1.0),
            100.0);
      at(3 + cls, r, col) = 1.0;
    }
  }

  return s;
}

Sample generate_scenario(const GeneratorConfig& cfg, std::uint64_t base_seed,
                         std::int64_t id, const std::string& split) {
  const ScenarioParams p =
      derive_params(cfg, mix_seed(base_seed, static_cast<std::uint64_t>(id)), id);
  return render_sample(cfg, p, id, split);
}

DenseArray encode_social_relation(const BoundingBox& target,
                                  const std::vector<BoundingBox>& neighbors,
                                  int k_nb) {
  if (k_nb < 1) throw ConfigError("k_nb must be >= 1, got " + std::to_string(k_nb));
  if (target.w <= 0.0 || target.h <= 0.0)
    throw InvalidValueError("target box must have positive extents");

  std::vector<std::size_t> order(neighbors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> dist(neighbors.size());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    const double dx = neighbors[i].cx - target.cx;
    const double dy = neighbors[i].cy - target.cy;
    dist[i] = std::sqrt(dx * dx + dy * dy);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });

  DenseArray out = DenseArray::zeros({k_nb, 4});
  const std::size_t rows = std::min<std::size_t>(static_cast<std::size_t>(k_nb),
                                                 neighbors.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const BoundingBox& nb = neighbors[order[r]];
    if (nb.w <= 0.0 || nb.h <= 0.0)
      throw InvalidValueError("neighbor box must have positive extents");
    const double ratios[4] = {std::abs(target.cx - nb.cx) / target.w,
                              std::abs(target.cy - nb.cy) / target.h,
                              nb.w / target.w, nb.h / target.h};
    for (int c = 0; c < 4; ++c)
      out.data[r * 4 + static_cast<std::size_t>(c)] =
          std::log(std::max(ratios[c], 1e-6));
  }
  return out;
}

}  // namespace spn
