#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "spn/dense_array.hpp"
#include "spn/sample.hpp"

namespace spn {

// Action labels.
inline constexpr int kActionCross = 0;
inline constexpr int kActionWalk = 1;
inline constexpr int kActionStand = 2;

// Planted concept ids. Each one drives a dedicated parameter group in the
// generator, so a scenario's raw parameters separate active from inactive
// samples with a single threshold.
inline constexpr int kConceptCrosswalk = 0;        // crosswalk band in context
inline constexpr int kConceptEgoBraking = 1;       // ego deceleration ramp
inline constexpr int kConceptCrossingMotion = 2;   // strong lateral velocity
inline constexpr int kConceptFastGait = 3;         // high gait frequency
inline constexpr int kConceptApproachingNb = 4;    // closing neighbor
inline constexpr int kConceptNearCurb = 5;         // start close to a curb
inline constexpr int kConceptShadowBand = 6;       // darkened context rows
inline constexpr int kConceptStationary = 7;       // near-zero walking speed

struct ConceptInfo {
  int id;
  const char* name;
  const char* controls;  // one-line description of the driven parameter
};

const std::vector<ConceptInfo>& concept_roster();

struct GeneratorConfig {
  int t_obs = 8;
  int t_pred = 8;
  int img_w = 512;
  int img_h = 512;
  int ctx_size = 32;
  int seg_classes = 4;  // road, sidewalk, crosswalk, other
  int k_nb = 4;
  int n_joints = 17;
  int n_concepts = 8;
  int n_actions = 3;

  double p_cross = 0.35;
  double p_stand = 0.30;     // p_walk is the remainder
  double p_concept = 0.20;   // prior for the six non-action concepts

  double sigma_traj = 0.3;   // per-frame center jitter, px
  double sigma_pose = 0.4;   // per-joint jitter, px
  double sigma_ego = 0.03;
  double sigma_ctx = 0.02;
};

struct NeighborTrack {
  double x0 = 0.0, y0 = 0.0;
  double vx = 0.0, vy = 0.0;
  double w = 0.0, h = 0.0;
};

// Raw scenario parameters. Everything the renderer needs is derived from
// these plus the noise seed, so a sample is a pure function of its seed.
struct ScenarioParams {
  std::array<bool, 8> active{};
  int action = kActionWalk;

  // layout
  double road_center = 0.0;
  double road_half = 0.0;
  double curb_side = 1.0;       // +1: start above the road, -1: below
  double curb_distance = 0.0;   // start distance to the near curb, px
  double x0 = 0.0, y0 = 0.0;

  // motion; velocity switches from (vx1, vy1) to (vx2, vy2) mid-observation
  double vx1 = 0.0, vy1 = 0.0;
  double vx2 = 0.0, vy2 = 0.0;
  int switch_frame = 0;
  double gait_freq = 0.0;
  double gait_amp = 0.0;
  double gait_phase = 0.0;
  double bbox_w = 0.0, bbox_h = 0.0;
  double stance = 1.0;  // lateral joint spread multiplier (profile vs stride)

  double ego_decel = 0.0;  // magnitude of the braking ramp; 0 when inactive

  int n_neighbors = 0;
  std::vector<NeighborTrack> neighbors;
  double approach_rate = 0.0;  // px/frame closing speed; 0 when inactive

  int crosswalk_cols = 0;      // 0 when no crosswalk
  double crosswalk_center = 0.0;
  double shadow_strength = 0.0;
  int shadow_row0 = 0;
  int shadow_rows = 0;

  std::uint64_t noise_seed = 0;
};

// Deterministic action rule: crossing motion wins, stationary stands,
// everything else walks.
int action_from_concepts(const std::array<bool, 8>& active);

ScenarioParams derive_params(const GeneratorConfig& cfg, std::uint64_t sample_seed,
                             std::int64_t id);

Sample render_sample(const GeneratorConfig& cfg, const ScenarioParams& params,
                     std::int64_t id, const std::string& split);

// Pure function of (cfg, base_seed, id).
Sample generate_scenario(const GeneratorConfig& cfg, std::uint64_t base_seed,
                         std::int64_t id, const std::string& split);

// Rows sorted by center distance ascending (ties by input order), one row per
// neighbor up to k_nb, zero padding after. Each row holds the four log-ratio
// features of the neighbor box against the target box; ratios are clamped
// below at 1e-6 before the log.
DenseArray encode_social_relation(const BoundingBox& target,
                                  const std::vector<BoundingBox>& neighbors,
                                  int k_nb);

}  // namespace spn
