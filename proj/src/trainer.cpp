#include "spn/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <unordered_map>

#include "spn/errors.hpp"
#include "spn/rng.hpp"
#include "spn/scenario.hpp"

namespace spn {

namespace a = ad;

// ---------------------------------------------------------------------------
// config

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return nlohmann::json{{"prototypes", c.prototypes},
                        {"embed_dim", c.embed_dim},
                        {"top_k", c.top_k},
                        {"modalities", c.modalities},
                        {"t_obs", c.t_obs},
                        {"t_pred", c.t_pred},
                        {"actions", c.actions},
                        {"batch_size", c.batch_size},
                        {"epochs", c.epochs},
                        {"learning_rate", c.learning_rate},
                        {"lambda_cluster", c.lambda_cluster},
                        {"lambda_l1", c.lambda_l1},
                        {"temperature", c.temperature},
                        {"weight_action", c.weight_action},
                        {"weight_traj", c.weight_traj},
                        {"weight_pose", c.weight_pose},
                        {"seed", c.seed},
                        {"attn_width", c.attn_width},
                        {"attn_heads", c.attn_heads},
                        {"conv_channels", c.conv_channels},
                        {"noise_dim", c.noise_dim},
                        {"decoder_width", c.decoder_width},
                        {"head_input", c.head_input},
                        {"grad_clip", c.grad_clip},
                        {"best_of", c.best_of}};
}

namespace {

template <typename T>
T json_get(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw ParseError(std::string("config is missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  TrainConfig c;
  c.prototypes = json_get<int>(j, "prototypes");
  c.embed_dim = json_get<int>(j, "embed_dim");
  c.top_k = json_get<int>(j, "top_k");
  c.modalities = json_get<int>(j, "modalities");
  c.t_obs = json_get<int>(j, "t_obs");
  c.t_pred = json_get<int>(j, "t_pred");
  c.actions = json_get<int>(j, "actions");
  c.batch_size = json_get<int>(j, "batch_size");
  c.epochs = json_get<int>(j, "epochs");
  c.learning_rate = json_get<double>(j, "learning_rate");
  c.lambda_cluster = json_get<double>(j, "lambda_cluster");
  c.lambda_l1 = json_get<double>(j, "lambda_l1");
  c.temperature = json_get<double>(j, "temperature");
  c.weight_action = json_get<double>(j, "weight_action");
  c.weight_traj = json_get<double>(j, "weight_traj");
  c.weight_pose = json_get<double>(j, "weight_pose");
  c.seed = json_get<std::uint64_t>(j, "seed");
  c.attn_width = json_get<int>(j, "attn_width");
  c.attn_heads = json_get<int>(j, "attn_heads");
  c.conv_channels = json_get<int>(j, "conv_channels");
  c.noise_dim = json_get<int>(j, "noise_dim");
  c.decoder_width = json_get<int>(j, "decoder_width");
  c.head_input = json_get<std::string>(j, "head_input");
  c.grad_clip = json_get<double>(j, "grad_clip");
  c.best_of = json_get<int>(j, "best_of");
  return c;
}

namespace {

long long parse_ll(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer from '" + value + "'");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  const long long v = parse_ll(key, value);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError("config key '" + key + "': value " + value + " out of int range");
  return static_cast<int>(v);
}

double parse_dbl(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse number from '" + value + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  if (!value.empty() && value[0] == '-')
    throw ConfigError("config key '" + key + "': value must be non-negative");
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse integer from '" + value + "'");
  }
}

}  // namespace

void apply_config_kv(TrainConfig& c, const std::string& key, const std::string& value) {
  if (key == "prototypes") c.prototypes = parse_int(key, value);
  else if (key == "embed_dim") c.embed_dim = parse_int(key, value);
  else if (key == "top_k") c.top_k = parse_int(key, value);
  else if (key == "modalities") c.modalities = parse_int(key, value);
  else if (key == "t_obs") c.t_obs = parse_int(key, value);
  else if (key == "t_pred") c.t_pred = parse_int(key, value);
  else if (key == "actions") c.actions = parse_int(key, value);
  else if (key == "batch_size") c.batch_size = parse_int(key, value);
  else if (key == "epochs") c.epochs = parse_int(key, value);
  else if (key == "learning_rate") c.learning_rate = parse_dbl(key, value);
  else if (key == "lambda_cluster") c.lambda_cluster = parse_dbl(key, value);
  else if (key == "lambda_l1") c.lambda_l1 = parse_dbl(key, value);
  else if (key == "temperature") c.temperature = parse_dbl(key, value);
  else if (key == "weight_action") c.weight_action = parse_dbl(key, value);
  else if (key == "weight_traj") c.weight_traj = parse_dbl(key, value);
  else if (key == "weight_pose") c.weight_pose = parse_dbl(key, value);
  else if (key == "seed") c.seed = parse_u64(key, value);
  else if (key == "attn_width") c.attn_width = parse_int(key, value);
  else if (key == "attn_heads") c.attn_heads = parse_int(key, value);
  else if (key == "conv_channels") c.conv_channels = parse_int(key, value);
  else if (key == "noise_dim") c.noise_dim = parse_int(key, value);
  else if (key == "decoder_width") c.decoder_width = parse_int(key, value);
  else if (key == "head_input") c.head_input = value;
  else if (key == "grad_clip") c.grad_clip = parse_dbl(key, value);
  else if (key == "best_of") c.best_of = parse_int(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

// ---------------------------------------------------------------------------
// model construction

int Model::head_dim() const {
  return cfg.head_input == "flat" ? cfg.prototypes * cfg.modalities : cfg.prototypes;
}

namespace {

void require_positive(int v, const char* what) {
  if (v <= 0) throw ConfigError(std::string(what) + " must be positive, got " + std::to_string(v));
}

void validate_config(const TrainConfig& c, const GeneratorConfig& g) {
  if (c.modalities != kModalityCount)
    throw ConfigError("modalities must be " + std::to_string(kModalityCount) + ", got " +
                      std::to_string(c.modalities));
  require_positive(c.prototypes, "prototypes");
  require_positive(c.embed_dim, "embed_dim");
  require_positive(c.top_k, "top_k");
  require_positive(c.t_obs, "t_obs");
  require_positive(c.t_pred, "t_pred");
  require_positive(c.batch_size, "batch_size");
  require_positive(c.attn_width, "attn_width");
  require_positive(c.attn_heads, "attn_heads");
  require_positive(c.conv_channels, "conv_channels");
  require_positive(c.noise_dim, "noise_dim");
  require_positive(c.decoder_width, "decoder_width");
  require_positive(c.best_of, "best_of");
  if (c.actions < 2) throw ConfigError("actions must be at least 2");
  if (c.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(c.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(c.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(c.grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
  if (c.lambda_cluster < 0.0 || c.lambda_l1 < 0.0)
    throw ConfigError("regularizer weights must be non-negative");
  if (c.weight_action < 0.0 || c.weight_traj < 0.0 || c.weight_pose < 0.0)
    throw ConfigError("task weights must be non-negative");
  if (c.head_input != "aggregate" && c.head_input != "flat")
    throw ConfigError("head_input must be 'aggregate' or 'flat', got '" + c.head_input + "'");
  if (c.lambda_cluster > 0.0 && c.batch_size < 2)
    throw ConfigError("batch_size must be at least 2 when lambda_cluster is positive");
  if (c.t_obs != g.t_obs)
    throw ConfigError("t_obs " + std::to_string(c.t_obs) + " does not match the dataset's " +
                      std::to_string(g.t_obs));
  if (c.t_pred != g.t_pred)
    throw ConfigError("t_pred " + std::to_string(c.t_pred) + " does not match the dataset's " +
                      std::to_string(g.t_pred));
  if (c.actions != g.n_actions)
    throw ConfigError("actions " + std::to_string(c.actions) + " does not match the dataset's " +
                      std::to_string(g.n_actions));
}

}  // namespace

Model build_model(const TrainConfig& cfg, const GeneratorConfig& geom) {
  validate_config(cfg, geom);
  Model m;
  m.cfg = cfg;
  m.geom = geom;
  m.store = std::make_unique<ParamStore>();
  ParamStore& st = *m.store;
  Rng rng(mix_seed(cfg.seed, 1));

  const int joints2 = geom.n_joints * 2;
  m.ctx_enc = std::make_unique<ConvEncoder>(st, "ctx", 3 + geom.seg_classes, geom.ctx_size,
                                            cfg.conv_channels, rng);
  m.pose_enc = std::make_unique<AttentionEncoder>(st, "pose", geom.t_obs, joints2,
                                                  cfg.attn_width, cfg.attn_heads, rng);
  m.traj_enc = std::make_unique<AttentionEncoder>(st, "traj", geom.t_obs, 4, cfg.attn_width,
                                                  cfg.attn_heads, rng);
  m.ego_enc = std::make_unique<AttentionEncoder>(st, "ego", geom.t_obs, 1, cfg.attn_width,
                                                 cfg.attn_heads, rng);
  m.social_enc = std::make_unique<AttentionEncoder>(st, "social", geom.k_nb, 4, cfg.attn_width,
                                                    cfg.attn_heads, rng);

  const std::array<int, kModalityCount> enc_dims = {
      m.ctx_enc->out_dim(), m.pose_enc->out_dim(), m.traj_enc->out_dim(), m.ego_enc->out_dim(),
      m.social_enc->out_dim()};
  for (int i = 0; i < kModalityCount; ++i) {
    // Wider than 1/sqrt(fan-in): encoder outputs are small at init, and the
    // joint embeddings must clear the downstream ReLUs with usable magnitude.
    const double bound = 3.0 / std::sqrt(static_cast<double>(enc_dims[i]));
    m.proj[static_cast<std::size_t>(i)] =
        st.add(std::string("proj.") + modality_name(i),
               uniform_init(rng, {enc_dims[i], cfg.embed_dim}, bound));
  }

  m.bank = std::make_unique<PrototypeBank>(st, "proto", cfg.prototypes, cfg.embed_dim, rng);
  m.action = std::make_unique<ActionHead>(st, "action", m.head_dim(), cfg.actions, rng);
  m.traj_head = std::make_unique<GenerativeHead>(st, "traj_dec", m.head_dim(), cfg.noise_dim,
                                                 cfg.decoder_width, geom.t_pred * 4, rng);
  m.pose_head = std::make_unique<GenerativeHead>(st, "pose_dec", m.head_dim(), cfg.noise_dim,
                                                 cfg.decoder_width, geom.t_pred * joints2, rng);
  return m;
}

// ---------------------------------------------------------------------------
// featurization

namespace {

// Flattens a frames-by-coordinates payload into a {1, numel} row with x-like
// (even) columns divided by the image width and y-like (odd) ones by height.
DenseArray normalized_row(const DenseArray& src, double img_w, double img_h) {
  const std::int64_t n = src.numel();
  DenseArray out = DenseArray::zeros({1, n});
  for (std::int64_t j = 0; j < n; ++j) {
    const double div = (j % 2 == 0) ? img_w : img_h;
    out.data[static_cast<std::size_t>(j)] = src.data[static_cast<std::size_t>(j)] / div;
  }
  return out;
}

// Repeats the last observed frame of `obs` (row-major, `frame_w` values per
// frame) for t_pred frames, normalized like normalized_row.
DenseArray anchor_row(const DenseArray& obs, std::int64_t frame_w, int t_pred, double img_w,
                      double img_h) {
  const std::int64_t frames = obs.numel() / frame_w;
  const std::size_t off = static_cast<std::size_t>((frames - 1) * frame_w);
  DenseArray out = DenseArray::zeros({1, static_cast<std::int64_t>(t_pred) * frame_w});
  for (int t = 0; t < t_pred; ++t) {
    for (std::int64_t j = 0; j < frame_w; ++j) {
      const double div = (j % 2 == 0) ? img_w : img_h;
      out.data[static_cast<std::size_t>(t) * static_cast<std::size_t>(frame_w) +
               static_cast<std::size_t>(j)] = obs.data[off + static_cast<std::size_t>(j)] / div;
    }
  }
  return out;
}

}  // namespace

BatchCache featurize(const Model& model, const Sample& s) {
  const auto& g = model.geom;
  BatchCache c;
  c.inputs[0] = ctx_features(s);
  c.inputs[1] = pose_features(s);
  c.inputs[2] = traj_features(s);
  c.inputs[3] = ego_features(s);
  c.inputs[4] = social_features(s);
  const double w = static_cast<double>(s.img_w), h = static_cast<double>(s.img_h);
  c.traj_anchor = anchor_row(s.traj_obs, 4, g.t_pred, w, h);
  c.pose_anchor = anchor_row(s.pose_obs, g.n_joints * 2, g.t_pred, w, h);
  c.traj_target = normalized_row(s.traj_fut, w, h);
  c.pose_target = normalized_row(s.pose_fut, w, h);
  c.action = s.action;
  c.sample_id = s.id;
  c.concepts = s.concepts;
  return c;
}

// ---------------------------------------------------------------------------
// forward

namespace {

DenseArray stack_rows(const std::vector<const BatchCache*>& batch,
                      const DenseArray BatchCache::*field) {
  const std::int64_t b = static_cast<std::int64_t>(batch.size());
  const std::int64_t w = (batch[0]->*field).numel();
  DenseArray out = DenseArray::zeros({b, w});
  for (std::int64_t i = 0; i < b; ++i) {
    const DenseArray& row = batch[static_cast<std::size_t>(i)]->*field;
    if (row.numel() != w) throw ShapeError("inconsistent cached row widths in batch");
    std::copy(row.data.begin(), row.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  return out;
}

}  // namespace

EncodedBatch encode_batch(const Model& model, const std::vector<const BatchCache*>& batch,
                          const std::optional<std::vector<int>>& keep) {
  if (batch.empty()) throw ContractError("encode_batch needs a non-empty batch");
  EncodedBatch out;
  out.embeddings.reserve(kModalityCount);
  out.activations.reserve(kModalityCount);
  for (int m = 0; m < kModalityCount; ++m) {
    std::vector<Var> rows;
    rows.reserve(batch.size());
    for (const BatchCache* c : batch) {
      const Var x = a::constant(c->inputs[static_cast<std::size_t>(m)]);
      switch (m) {
        case 0: rows.push_back(model.ctx_enc->forward(x)); break;
        case 1: rows.push_back(model.pose_enc->forward(x)); break;
        case 2: rows.push_back(model.traj_enc->forward(x)); break;
        case 3: rows.push_back(model.ego_enc->forward(x)); break;
        default: rows.push_back(model.social_enc->forward(x)); break;
      }
    }
    const Var feats = rows.size() == 1 ? rows[0] : a::concat_rows(rows);
    const Var proj = model.store->var(model.proj[static_cast<std::size_t>(m)]);
    const Var emb = a::relu(a::matmul(feats, proj));
    Var act = model.bank->activations(emb);
    if (keep.has_value()) act = mask_rows(act, *keep);
    out.embeddings.push_back(emb);
    out.activations.push_back(act);
  }
  out.features = model.cfg.head_input == "flat" ? flatten_activations(out.activations)
                                                : aggregate_activations(out.activations);
  out.action_probs = model.action->predict(out.features);
  out.traj_anchor = a::constant(stack_rows(batch, &BatchCache::traj_anchor));
  out.pose_anchor = a::constant(stack_rows(batch, &BatchCache::pose_anchor));
  return out;
}

Var predict_traj(const Model& model, const EncodedBatch& enc, const DenseArray& noise) {
  return model.traj_head->forward(enc.features, a::constant(noise), enc.traj_anchor);
}

Var predict_pose(const Model& model, const EncodedBatch& enc, const DenseArray& noise) {
  return model.pose_head->forward(enc.features, a::constant(noise), enc.pose_anchor);
}

// ---------------------------------------------------------------------------
// training

namespace {

DenseArray normal_matrix(Rng& rng, std::int64_t rows, std::int64_t cols) {
  DenseArray out = DenseArray::zeros({rows, cols});
  for (double& x : out.data) x = rng.normal();
  return out;
}

void shuffle_indices(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(order[i - 1], order[j]);
  }
}

double scalar_value(const Var& v) { return v->value.data.at(0); }

nlohmann::json loss_report_json(const LossReport& r) {
  return nlohmann::json{{"clustering", r.clustering}, {"l1", r.l1},
                        {"action_ce", r.action_ce},   {"traj_mse", r.traj_mse},
                        {"pose_mse", r.pose_mse},     {"total", r.total}};
}

}  // namespace

TrainResult train(Model& model, const std::vector<Sample>& train_split, std::ostream* log,
                  std::vector<AdamState>* opt_out) {
  const TrainConfig& cfg = model.cfg;
  const std::size_t n = train_split.size();
  if (cfg.epochs > 0 && n < static_cast<std::size_t>(cfg.batch_size))
    throw ConfigError("training split has " + std::to_string(n) +
                      " samples, smaller than one batch of " + std::to_string(cfg.batch_size));

  std::vector<BatchCache> caches;
  caches.reserve(n);
  for (const Sample& s : train_split) caches.push_back(featurize(model, s));

  const AdamConfig adam_cfg{cfg.learning_rate, 0.9, 0.999, 1e-8};
  const std::vector<Var>& params = model.store->vars();
  std::vector<AdamState> opt;
  opt.reserve(params.size());
  for (const Var& p : params) opt.push_back(AdamState::init(p->value.shape, adam_cfg));

  Rng noise_rng(mix_seed(cfg.seed, 3));
  const LossWeights weights{cfg.lambda_cluster, cfg.lambda_l1, cfg.weight_action, cfg.weight_traj,
                            cfg.weight_pose};

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(mix_seed(cfg.seed, 2, static_cast<std::uint64_t>(epoch)));
    shuffle_indices(order, shuffle_rng);

    LossReport sums;
    int steps = 0;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (std::size_t start = 0; start + bs <= n; start += bs) {
      std::vector<const BatchCache*> batch(bs);
      std::vector<int> labels(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        batch[i] = &caches[order[start + i]];
        labels[i] = batch[i]->action;
      }
      const DenseArray traj_noise =
          normal_matrix(noise_rng, static_cast<std::int64_t>(bs), cfg.noise_dim);
      const DenseArray pose_noise =
          normal_matrix(noise_rng, static_cast<std::int64_t>(bs), cfg.noise_dim);

      const EncodedBatch enc = encode_batch(model, batch, std::nullopt);
      LossTerms terms;
      terms.clustering = clustering_loss(enc.embeddings, cfg.temperature);
      terms.l1 = l1_sparsity(enc.activations);
      terms.action_ce = cross_entropy(enc.action_probs, labels);
      terms.traj_mse = sequence_mse(predict_traj(model, enc, traj_noise),
                                    a::constant(stack_rows(batch, &BatchCache::traj_target)));
      terms.pose_mse = sequence_mse(predict_pose(model, enc, pose_noise),
                                    a::constant(stack_rows(batch, &BatchCache::pose_target)));
      const Var total = total_loss(terms, weights);
      a::backward(total);

      // global-norm gradient clipping across every parameter jointly
      std::vector<DenseArray> grads;
      grads.reserve(params.size());
      double sq = 0.0;
      for (const Var& p : params) {
        grads.push_back(a::grad_array(p));
        for (const double g : grads.back().data) sq += g * g;
      }
      const double norm = std::sqrt(sq);
      if (!std::isfinite(norm))
        throw InvalidValueError("non-finite gradient norm at epoch " + std::to_string(epoch));
      const double scale = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (scale != 1.0)
          for (double& g : grads[i].data) g *= scale;
        adam_step(params[i]->value, grads[i], opt[i]);
      }

      sums.clustering += scalar_value(terms.clustering);
      sums.l1 += scalar_value(terms.l1);
      sums.action_ce += scalar_value(terms.action_ce);
      sums.traj_mse += scalar_value(terms.traj_mse);
      sums.pose_mse += scalar_value(terms.pose_mse);
      sums.total += scalar_value(total);
      ++steps;
    }

    EpochLog el;
    el.epoch = epoch;
    const double inv = steps > 0 ? 1.0 / steps : 0.0;
    el.mean = {sums.clustering * inv, sums.l1 * inv,       sums.action_ce * inv,
               sums.traj_mse * inv,   sums.pose_mse * inv, sums.total * inv};
    el.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                     .count();
    if (log) {
      nlohmann::json line = loss_report_json(el.mean);
      line["epoch"] = el.epoch;
      line["wall_ms"] = el.wall_ms;
      (*log) << line.dump() << '\n' << std::flush;
    }
    result.epochs.push_back(std::move(el));
  }

  if (opt_out) *opt_out = std::move(opt);
  return result;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kCheckpointMagic[8] = {'S', 'P', 'N', 'C', 'K', 'P', 'T', '1'};
constexpr const char* kCheckpointFormat = "spn-checkpoint-v1";

void write_u64_le(std::ofstream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64_blob(std::ofstream& out, const std::vector<double>& xs) {
  std::vector<unsigned char> buf(xs.size() * 8);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(xs[i]);
    for (int k = 0; k < 8; ++k) buf[i * 8 + static_cast<std::size_t>(k)] =
        static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::uint64_t read_u64_le(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (in.gcount() != 8) throw IoError("truncated checkpoint header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::vector<double> read_f64_blob(std::ifstream& in, std::size_t count, const char* what) {
  std::vector<unsigned char> buf(count * 8);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw IoError(std::string("truncated checkpoint payload while reading ") + what);
  std::vector<double> xs(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k)
      bits |= static_cast<std::uint64_t>(buf[i * 8 + static_cast<std::size_t>(k)]) << (8 * k);
    xs[i] = std::bit_cast<double>(bits);
  }
  return xs;
}

}  // namespace

void save_checkpoint(const Model& model, const std::vector<AdamState>& opt,
                     const std::string& path, const std::optional<LossReport>& final_loss) {
  const std::vector<Var>& params = model.store->vars();
  if (!opt.empty() && opt.size() != params.size())
    throw ContractError("optimizer state count " + std::to_string(opt.size()) +
                        " does not match parameter count " + std::to_string(params.size()));
  for (std::size_t i = 0; i < opt.size(); ++i)
    if (!opt[i].m.same_shape(params[i]->value) || !opt[i].v.same_shape(params[i]->value))
      throw ContractError("optimizer moment shapes do not match parameter '" +
                          model.store->names()[i] + "'");

  nlohmann::json manifest;
  manifest["format"] = kCheckpointFormat;
  manifest["config"] = train_config_to_json(model.cfg);
  manifest["geometry"] = generator_config_to_json(model.geom);
  nlohmann::json plist = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i)
    plist.push_back({{"name", model.store->names()[i]}, {"shape", params[i]->value.shape}});
  manifest["params"] = std::move(plist);
  nlohmann::json steps = nlohmann::json::array();
  for (const AdamState& s : opt) steps.push_back(s.step);
  manifest["adam"] = {{"steps", std::move(steps)}};
  manifest["final_loss"] =
      final_loss.has_value() ? loss_report_json(*final_loss) : nlohmann::json(nullptr);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::string mtext = manifest.dump();
  write_u64_le(out, mtext.size());
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const Var& p : params) write_f64_blob(out, p->value.data);
  for (const AdamState& s : opt) write_f64_blob(out, s.m.data);
  for (const AdamState& s : opt) write_f64_blob(out, s.v.data);
  out.flush();
  if (!out) throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw VersionError("not a recognizable checkpoint file: " + path);
  const std::uint64_t mlen = read_u64_le(in);
  if (mlen == 0 || mlen > (1ull << 30)) throw ParseError("implausible checkpoint manifest size");
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (static_cast<std::uint64_t>(in.gcount()) != mlen)
    throw IoError("truncated checkpoint manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mtext);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  if (!manifest.contains("format") || !manifest.at("format").is_string())
    throw ParseError("checkpoint manifest lacks a format tag");
  if (manifest.at("format").get<std::string>() != kCheckpointFormat)
    throw VersionError("unsupported checkpoint format '" +
                       manifest.at("format").get<std::string>() + "'");

  Checkpoint ck{build_model(train_config_from_json(manifest.at("config")),
                            generator_config_from_json(manifest.at("geometry"))),
                {}};
  const std::vector<Var>& params = ck.model.store->vars();
  const nlohmann::json& plist = manifest.at("params");
  if (!plist.is_array() || plist.size() != params.size())
    throw ParseError("checkpoint parameter list does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = json_get<std::string>(plist[i], "name");
    const std::vector<std::int64_t> shape = json_get<std::vector<std::int64_t>>(plist[i], "shape");
    if (name != ck.model.store->names()[i] || shape != params[i]->value.shape)
      throw ParseError("checkpoint parameter '" + name + "' does not match the model's '" +
                       ck.model.store->names()[i] + "' " + shape_str(params[i]->value.shape));
  }

  for (const Var& p : params)
    p->value.data = read_f64_blob(in, p->value.data.size(), "parameters");

  const nlohmann::json& steps = manifest.at("adam").at("steps");
  if (!steps.is_array() || (steps.size() != 0 && steps.size() != params.size()))
    throw ParseError("checkpoint optimizer step list does not match the model");
  if (!steps.empty()) {
    const AdamConfig adam_cfg{ck.model.cfg.learning_rate, 0.9, 0.999, 1e-8};
    ck.opt.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      AdamState s = AdamState::init(params[i]->value.shape, adam_cfg);
      s.step = steps[i].get<std::int64_t>();
      ck.opt.push_back(std::move(s));
    }
    for (AdamState& s : ck.opt) s.m.data = read_f64_blob(in, s.m.data.size(), "first moments");
    for (AdamState& s : ck.opt) s.v.data = read_f64_blob(in, s.v.data.size(), "second moments");
  }
  if (manifest.contains("final_loss") && !manifest.at("final_loss").is_null()) {
    const nlohmann::json& fl = manifest.at("final_loss");
    LossReport r;
    r.clustering = json_get<double>(fl, "clustering");
    r.l1 = json_get<double>(fl, "l1");
    r.action_ce = json_get<double>(fl, "action_ce");
    r.traj_mse = json_get<double>(fl, "traj_mse");
    r.pose_mse = json_get<double>(fl, "pose_mse");
    r.total = json_get<double>(fl, "total");
    ck.final_loss = r;
  }
  if (in.peek() != std::ifstream::traits_type::eof())
    throw ParseError("trailing bytes after checkpoint payload");
  for (const Var& p : params) require_finite(p->value, "checkpoint parameters");
  return ck;
}

// ---------------------------------------------------------------------------
// evaluation

namespace {

// One stream per (seed, sample id, draw index); trajectory noise is drawn
// first, pose noise second, so draws replay identically however samples are
// batched.
std::pair<DenseArray, DenseArray> eval_noise(const Model& model,
                                             const std::vector<const BatchCache*>& batch,
                                             int draw) {
  const std::int64_t b = static_cast<std::int64_t>(batch.size());
  DenseArray traj = DenseArray::zeros({b, model.cfg.noise_dim});
  DenseArray pose = DenseArray::zeros({b, model.cfg.noise_dim});
  for (std::int64_t i = 0; i < b; ++i) {
    Rng rng(mix_seed(model.cfg.seed,
                     static_cast<std::uint64_t>(batch[static_cast<std::size_t>(i)]->sample_id),
                     static_cast<std::uint64_t>(draw)));
    for (int j = 0; j < model.cfg.noise_dim; ++j) traj.at(i, j) = rng.normal();
    for (int j = 0; j < model.cfg.noise_dim; ++j) pose.at(i, j) = rng.normal();
  }
  return {std::move(traj), std::move(pose)};
}

// {1, w} pixel-space row from a normalized batch row.
DenseArray px_row(const DenseArray& batch_values, std::int64_t row, double img_w, double img_h) {
  const std::int64_t w = batch_values.cols();
  DenseArray out = DenseArray::zeros({1, w});
  for (std::int64_t j = 0; j < w; ++j)
    out.data[static_cast<std::size_t>(j)] = batch_values.at(row, j) * (j % 2 == 0 ? img_w : img_h);
  return out;
}

DenseArray flat_row(const DenseArray& src) {
  DenseArray out = src;
  out.shape = {1, src.numel()};
  return out;
}

}  // namespace

EvalReport evaluate(const Model& model, const std::vector<Sample>& samples,
                    const std::string& split_name, const EvalOptions& opts) {
  if (samples.empty()) throw ContractError("evaluate needs at least one sample");
  const TrainConfig& cfg = model.cfg;
  const std::size_t n = samples.size();

  std::vector<BatchCache> caches;
  caches.reserve(n);
  for (const Sample& s : samples) caches.push_back(featurize(model, s));
  std::unordered_map<std::int64_t, const std::vector<int>*> concepts_by_id;
  for (const BatchCache& c : caches) concepts_by_id[c.sample_id] = &c.concepts;

  std::vector<int> preds, truths;
  preds.reserve(n);
  truths.reserve(n);
  double traj_sum = 0.0, pose_sum = 0.0, traj_base_sum = 0.0, pose_base_sum = 0.0;
  std::vector<std::vector<PoolEntry>> pools(static_cast<std::size_t>(cfg.prototypes));

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start < n; start += bs) {
    const std::size_t end = std::min(n, start + bs);
    std::vector<const BatchCache*> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) batch.push_back(&caches[i]);
    const std::int64_t b = static_cast<std::int64_t>(batch.size());

    const EncodedBatch enc = encode_batch(model, batch, opts.keep);

    const std::vector<int> batch_pred = argmax_rows(enc.action_probs->value);
    for (std::int64_t i = 0; i < b; ++i) {
      preds.push_back(batch_pred[static_cast<std::size_t>(i)]);
      truths.push_back(batch[static_cast<std::size_t>(i)]->action);
    }

    for (int m = 0; m < kModalityCount; ++m) {
      const DenseArray& act = enc.activations[static_cast<std::size_t>(m)]->value;
      for (int p = 0; p < cfg.prototypes; ++p)
        for (std::int64_t i = 0; i < b; ++i)
          pools[static_cast<std::size_t>(p)].push_back(
              {act.at(p, i), batch[static_cast<std::size_t>(i)]->sample_id, m});
    }

    std::vector<double> best_traj(static_cast<std::size_t>(b),
                                  std::numeric_limits<double>::infinity());
    std::vector<double> best_pose = best_traj;
    for (int d = 0; d < cfg.best_of; ++d) {
      const auto [traj_noise, pose_noise] = eval_noise(model, batch, d);
      const DenseArray traj_v = predict_traj(model, enc, traj_noise)->value;
      const DenseArray pose_v = predict_pose(model, enc, pose_noise)->value;
      for (std::int64_t i = 0; i < b; ++i) {
        const Sample& s = samples[start + static_cast<std::size_t>(i)];
        const double w = static_cast<double>(s.img_w), h = static_cast<double>(s.img_h);
        const double tm = normalized_mse(px_row(traj_v, i, w, h), flat_row(s.traj_fut), s.img_w,
                                         s.img_h);
        const double pm = normalized_mse(px_row(pose_v, i, w, h), flat_row(s.pose_fut), s.img_w,
                                         s.img_h);
        auto& bt = best_traj[static_cast<std::size_t>(i)];
        auto& bp = best_pose[static_cast<std::size_t>(i)];
        bt = std::min(bt, tm);
        bp = std::min(bp, pm);
      }
    }
    const DenseArray& ta = enc.traj_anchor->value;
    const DenseArray& pa = enc.pose_anchor->value;
    for (std::int64_t i = 0; i < b; ++i) {
      const Sample& s = samples[start + static_cast<std::size_t>(i)];
      const double w = static_cast<double>(s.img_w), h = static_cast<double>(s.img_h);
      traj_sum += best_traj[static_cast<std::size_t>(i)];
      pose_sum += best_pose[static_cast<std::size_t>(i)];
      traj_base_sum += normalized_mse(px_row(ta, i, w, h), flat_row(s.traj_fut), s.img_w, s.img_h);
      pose_base_sum += normalized_mse(px_row(pa, i, w, h), flat_row(s.pose_fut), s.img_w, s.img_h);
    }
  }

  EvalReport r;
  r.split = split_name;
  r.n_samples = static_cast<std::int64_t>(n);
  const ClassificationMetrics cm = classification_metrics(preds, truths, cfg.actions);
  r.accuracy = cm.accuracy;
  r.f1 = cm.f1;
  r.traj_mse = traj_sum / static_cast<double>(n);
  r.pose_mse = pose_sum / static_cast<double>(n);
  r.baseline_traj_mse = traj_base_sum / static_cast<double>(n);
  r.baseline_pose_mse = pose_base_sum / static_cast<double>(n);
  r.proto_psi.reserve(pools.size());
  r.proto_purity.reserve(pools.size());
  for (const std::vector<PoolEntry>& pool : pools) {
    std::vector<double> values;
    values.reserve(pool.size());
    for (const PoolEntry& e : pool) values.push_back(e.activation);
    r.proto_psi.push_back(top_k_ms(values, cfg.top_k).psi);
    std::vector<std::vector<int>> sets;
    for (const PoolEntry& e : top_entries(pool, cfg.top_k))
      sets.push_back(*concepts_by_id.at(e.sample_id));
    r.proto_purity.push_back(concept_purity(sets, model.geom.n_concepts));
  }
  r.mean_topk_ms = std::accumulate(r.proto_psi.begin(), r.proto_psi.end(), 0.0) /
                   static_cast<double>(r.proto_psi.size());
  return r;
}

// ---------------------------------------------------------------------------
// ablation

std::vector<AblationRow> ablate_regularizers(const TrainConfig& cfg, const GeneratorConfig& geom,
                                             const std::vector<Sample>& train_split,
                                             const std::vector<Sample>& eval_split,
                                             const std::string& split_name, std::ostream* log) {
  const std::array<std::pair<double, double>, 4> grid = {
      std::pair<double, double>{0.0, 0.0},
      {cfg.lambda_cluster, 0.0},
      {0.0, cfg.lambda_l1},
      {cfg.lambda_cluster, cfg.lambda_l1}};
  std::vector<AblationRow> rows;
  rows.reserve(grid.size());
  for (const auto& [lc, ll] : grid) {
    TrainConfig variant = cfg;
    variant.lambda_cluster = lc;
    variant.lambda_l1 = ll;
    if (log)
      (*log) << nlohmann::json{{"ablation", {{"lambda_cluster", lc}, {"lambda_l1", ll}}}}.dump()
             << '\n';
    Model model = build_model(variant, geom);
    train(model, train_split, log);
    rows.push_back({lc, ll, evaluate(model, eval_split, split_name)});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// prototype selection

std::vector<std::vector<PoolEntry>> collect_activation_pools(const Model& model,
                                                             const std::vector<Sample>& samples) {
  if (samples.empty()) throw ContractError("activation pools need at least one sample");
  std::vector<BatchCache> caches;
  caches.reserve(samples.size());
  for (const Sample& s : samples) caches.push_back(featurize(model, s));
  std::vector<std::vector<PoolEntry>> pools(static_cast<std::size_t>(model.cfg.prototypes));
  const std::size_t bs = static_cast<std::size_t>(model.cfg.batch_size);
  for (std::size_t start = 0; start < caches.size(); start += bs) {
    const std::size_t end = std::min(caches.size(), start + bs);
    std::vector<const BatchCache*> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) batch.push_back(&caches[i]);
    const EncodedBatch enc = encode_batch(model, batch, std::nullopt);
    for (int m = 0; m < kModalityCount; ++m) {
      const DenseArray& act = enc.activations[static_cast<std::size_t>(m)]->value;
      for (int p = 0; p < model.cfg.prototypes; ++p)
        for (std::int64_t i = 0; i < act.cols(); ++i)
          pools[static_cast<std::size_t>(p)].push_back(
              {act.at(p, i), batch[static_cast<std::size_t>(i)]->sample_id, m});
    }
  }
  return pools;
}

std::vector<int> select_prototypes(const Model& model, const std::vector<Sample>& samples,
                                   const std::string& criterion, int keep) {
  const int n = model.cfg.prototypes;
  if (keep < 0 || keep > n)
    throw RangeError("keep must be between 0 and " + std::to_string(n) + ", got " +
                     std::to_string(keep));

  std::vector<double> score(static_cast<std::size_t>(n), 0.0);
  if (criterion == "topk-ms") {
    const std::vector<std::vector<PoolEntry>> pools = collect_activation_pools(model, samples);
    for (int p = 0; p < n; ++p) {
      std::vector<double> values;
      values.reserve(pools[static_cast<std::size_t>(p)].size());
      for (const PoolEntry& e : pools[static_cast<std::size_t>(p)]) values.push_back(e.activation);
      score[static_cast<std::size_t>(p)] = top_k_ms(values, model.cfg.top_k).psi;
    }
  } else if (criterion == "linear-weight") {
    const DenseArray& w = model.store->named("action.w")->value;
    const int blocks = model.cfg.head_input == "flat" ? model.cfg.modalities : 1;
    for (int p = 0; p < n; ++p) {
      double mass = 0.0;
      for (int blk = 0; blk < blocks; ++blk)
        for (std::int64_t c = 0; c < w.cols(); ++c) mass += std::abs(w.at(blk * n + p, c));
      score[static_cast<std::size_t>(p)] = mass;
    }
  } else {
    throw ConfigError("unknown prototype selection criterion '" + criterion +
                      "' (expected 'topk-ms' or 'linear-weight')");
  }

  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](int lhs, int rhs) {
    const double a = score[static_cast<std::size_t>(lhs)];
    const double b = score[static_cast<std::size_t>(rhs)];
    if (a != b) return a > b;
    return lhs < rhs;
  });
  ids.resize(static_cast<std::size_t>(keep));
  return ids;
}

}  // namespace spn
