#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spn/adam.hpp"
#include "spn/dataset_io.hpp"
#include "spn/encoders.hpp"
#include "spn/heads.hpp"
#include "spn/losses.hpp"
#include "spn/metrics.hpp"
#include "spn/proto_layer.hpp"

namespace spn {

// Field names double as config-file keys.
struct TrainConfig {
  int prototypes = 16;
  int embed_dim = 64;
  int top_k = 5;
  int modalities = kModalityCount;
  int t_obs = 8;
  int t_pred = 8;
  int actions = 3;
  int batch_size = 32;
  int epochs = 20;
  double learning_rate = 1e-3;
  double lambda_cluster = 0.001;
  double lambda_l1 = 0.01;
  double temperature = 0.1;
  double weight_action = 1.0;
  double weight_traj = 1.0;
  double weight_pose = 1.0;
  std::uint64_t seed = 42;
  int attn_width = 64;
  int attn_heads = 4;
  int conv_channels = 8;
  int noise_dim = 16;
  int decoder_width = 128;
  std::string head_input = "aggregate";  // "aggregate" or "flat"
  double grad_clip = 5.0;
  int best_of = 5;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Applies one "key = value" assignment; unknown keys or unparsable values
// raise ConfigError.
void apply_config_kv(TrainConfig& cfg, const std::string& key,
                     const std::string& value);

// Full model: five modality encoders projected into a joint embedding space,
// matched against a shared prototype bank whose rectified activations are the
// only input of every prediction head.
struct Model {
  TrainConfig cfg;
  GeneratorConfig geom;
  std::unique_ptr<ParamStore> store;  // heap-stable: modules point into it
  std::unique_ptr<ConvEncoder> ctx_enc;
  std::unique_ptr<AttentionEncoder> pose_enc, traj_enc, ego_enc, social_enc;
  std::array<std::size_t, kModalityCount> proj{};  // joint-space projections
  std::unique_ptr<PrototypeBank> bank;
  std::unique_ptr<ActionHead> action;
  std::unique_ptr<GenerativeHead> traj_head, pose_head;

  int head_dim() const;
};

// Validates the config against the dataset geometry and initializes all
// parameters from the config seed.
Model build_model(const TrainConfig& cfg, const GeneratorConfig& geom);

// Per-sample constants cached once so epochs never re-featurize payloads.
struct BatchCache {
  std::array<DenseArray, kModalityCount> inputs;
  DenseArray traj_anchor, pose_anchor;  // {1, t_pred*4} / {1, t_pred*joints*2}
  DenseArray traj_target, pose_target;  // normalized futures, same widths
  int action = 0;
  std::int64_t sample_id = 0;
  std::vector<int> concepts;
};

BatchCache featurize(const Model& model, const Sample& s);

// Everything upstream of the generative heads for one batch.
struct EncodedBatch {
  std::vector<Var> embeddings;   // per modality {B, D}
  std::vector<Var> activations;  // per modality {N, B}, mask already applied
  Var features;                  // {B, head_dim}
  Var action_probs;              // {B, actions}
  Var traj_anchor, pose_anchor;  // constants {B, out_dim}
};

EncodedBatch encode_batch(const Model& model,
                          const std::vector<const BatchCache*>& batch,
                          const std::optional<std::vector<int>>& keep = std::nullopt);

// Generative rollouts for one noise draw; image-normalized coordinates.
Var predict_traj(const Model& model, const EncodedBatch& enc, const DenseArray& noise);
Var predict_pose(const Model& model, const EncodedBatch& enc, const DenseArray& noise);

struct LossReport {
  double clustering = 0.0, l1 = 0.0, action_ce = 0.0;
  double traj_mse = 0.0, pose_mse = 0.0, total = 0.0;
};

struct EpochLog {
  int epoch = 0;
  LossReport mean;
  double wall_ms = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
};

// Trains in place. Shuffling, init, and noise derive from cfg.seed only;
// per-epoch mean losses go to `log` as one JSON line per epoch when set;
// final optimizer state lands in `opt_out` when set.
TrainResult train(Model& model, const std::vector<Sample>& train_split,
                  std::ostream* log, std::vector<AdamState>* opt_out = nullptr);

// Binary checkpoint: an 8-byte magic, a little-endian u64 manifest length,
// a JSON manifest (config, geometry, parameter names/shapes, optimizer
// steps, final-epoch losses), then raw little-endian f64 blobs (parameter
// values, then Adam first and second moments) in registration order.
void save_checkpoint(const Model& model, const std::vector<AdamState>& opt,
                     const std::string& path,
                     const std::optional<LossReport>& final_loss = std::nullopt);

struct Checkpoint {
  Model model;
  std::vector<AdamState> opt;
  std::optional<LossReport> final_loss;
};

Checkpoint load_checkpoint(const std::string& path);

struct EvalOptions {
  std::optional<std::vector<int>> keep;  // prototype mask
};

EvalReport evaluate(const Model& model, const std::vector<Sample>& samples,
                    const std::string& split_name, const EvalOptions& opts = {});

// Trains the same seed/data under the four regularizer on/off combinations
// and evaluates each; row order: (0,0), (lc,0), (0,ll1), (lc,ll1).
struct AblationRow {
  double lambda_cluster = 0.0, lambda_l1 = 0.0;
  EvalReport report;
};
std::vector<AblationRow> ablate_regularizers(const TrainConfig& cfg,
                                             const GeneratorConfig& geom,
                                             const std::vector<Sample>& train_split,
                                             const std::vector<Sample>& eval_split,
                                             const std::string& split_name,
                                             std::ostream* log);

// Per-prototype activation pools over (sample, modality) pairs, in split
// order; the raw material for selection rankings and explanation reports.
std::vector<std::vector<PoolEntry>> collect_activation_pools(
    const Model& model, const std::vector<Sample>& samples);

// Ranks prototypes by a pruning criterion and returns the `keep` best ids
// (ranking value descending, ties toward the lower id).
//  - "topk-ms":       top-k mono-semanticity score over the samples' pools
//  - "linear-weight": L1 mass of the action-head rows tied to each prototype
std::vector<int> select_prototypes(const Model& model,
                                   const std::vector<Sample>& samples,
                                   const std::string& criterion, int keep);

}  // namespace spn
