// Acceptance suite: eight release gates, one [PASS]/[FAIL] line each, exit 0
// only when every gate holds. Heavy artifacts (datasets, trained models,
// checkpoints) are built once in a scratch directory and shared between gates.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "spn/autodiff.hpp"
#include "spn/dataset_io.hpp"
#include "spn/dense_array.hpp"
#include "spn/grad_check.hpp"
#include "spn/losses.hpp"
#include "spn/metrics.hpp"
#include "spn/params.hpp"
#include "spn/proto_layer.hpp"
#include "spn/rng.hpp"
#include "spn/scenario.hpp"
#include "spn/trainer.hpp"

using namespace spn;
namespace a = spn::ad;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

// ---- gate thresholds, pinned ------------------------------------------------
constexpr double kGradTol = 1e-4;         // finite-difference agreement
constexpr double kGradBudgetSec = 60.0;   // whole gradient gate
constexpr double kClosedFormTol = 1e-9;   // analytic loss / score values
constexpr double kAffineRelTol = 1e-6;    // scale covariance of the top-k score
constexpr double kTrainBudgetSec = 600.0; // dataset + train + eval, one core
constexpr double kMinAccuracy = 0.85;
constexpr double kMaxMajority = 0.55;     // class balance guard on the test split
constexpr int kRegSeedWins = 2;           // of 3 seeds
constexpr double kMaxAccuracyDrop = 0.05; // mean accuracy cost of regularizers
constexpr double kPurityFactor = 1.5;     // vs. shuffled-pool baseline
constexpr int kPurityShuffles = 1000;
constexpr double kRoundTripTol = 1e-12;   // checkpoint reload metric drift

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::cout << (pass ? "[PASS]" : "[FAIL]") << " criterion " << id << " — "
            << name << ": " << detail << std::endl;
}

DenseArray normal_array(Rng& rng, std::vector<std::int64_t> shape) {
  DenseArray out = DenseArray::zeros(std::move(shape));
  for (double& d : out.data) d = rng.normal();
  return out;
}

// Stacks per-sample {1, w} rows into one {n, w} matrix.
DenseArray stack_rows(const std::vector<const DenseArray*>& rows) {
  const std::int64_t w = rows.front()->cols();
  DenseArray out = DenseArray::zeros({static_cast<std::int64_t>(rows.size()), w});
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i]->data.begin(), rows[i]->data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i) * w);
  return out;
}

bool arrays_identical(const DenseArray& x, const DenseArray& y) {
  return x.shape == y.shape && x.data == y.data;
}

bool reports_identical(const EvalReport& x, const EvalReport& y) {
  return x.split == y.split && x.n_samples == y.n_samples &&
         x.accuracy == y.accuracy && x.f1 == y.f1 && x.traj_mse == y.traj_mse &&
         x.pose_mse == y.pose_mse && x.baseline_traj_mse == y.baseline_traj_mse &&
         x.baseline_pose_mse == y.baseline_pose_mse &&
         x.mean_topk_ms == y.mean_topk_ms && x.proto_psi == y.proto_psi &&
         x.proto_purity == y.proto_purity;
}

// Largest |x - y| across every metric field of two reports.
double report_drift(const EvalReport& x, const EvalReport& y) {
  double d = 0.0;
  auto acc = [&](double u, double v) { d = std::max(d, std::abs(u - v)); };
  acc(x.accuracy, y.accuracy);
  acc(x.f1, y.f1);
  acc(x.traj_mse, y.traj_mse);
  acc(x.pose_mse, y.pose_mse);
  acc(x.baseline_traj_mse, y.baseline_traj_mse);
  acc(x.baseline_pose_mse, y.baseline_pose_mse);
  acc(x.mean_topk_ms, y.mean_topk_ms);
  if (x.proto_psi.size() != y.proto_psi.size() ||
      x.proto_purity.size() != y.proto_purity.size())
    return std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.proto_psi.size(); ++i)
    acc(x.proto_psi[i], y.proto_psi[i]);
  for (std::size_t i = 0; i < x.proto_purity.size(); ++i)
    acc(x.proto_purity[i], y.proto_purity[i]);
  return d;
}

bool report_finite(const EvalReport& r) {
  auto ok = [](double v) { return std::isfinite(v); };
  if (!ok(r.accuracy) || !ok(r.f1) || !ok(r.traj_mse) || !ok(r.pose_mse) ||
      !ok(r.baseline_traj_mse) || !ok(r.baseline_pose_mse) || !ok(r.mean_topk_ms))
    return false;
  if (r.accuracy < 0.0 || r.accuracy > 1.0 || r.f1 < 0.0 || r.f1 > 1.0) return false;
  if (r.traj_mse < 0.0 || r.pose_mse < 0.0) return false;
  for (double v : r.proto_psi)
    if (!ok(v)) return false;
  for (double v : r.proto_purity)
    if (!ok(v)) return false;
  return true;
}

bool samples_identical(const Sample& x, const Sample& y) {
  return x.id == y.id && x.split == y.split && x.concepts == y.concepts &&
         x.action == y.action && arrays_identical(x.ctx, y.ctx) &&
         arrays_identical(x.pose_obs, y.pose_obs) &&
         arrays_identical(x.traj_obs, y.traj_obs) &&
         arrays_identical(x.ego_obs, y.ego_obs) &&
         arrays_identical(x.social, y.social) &&
         x.neighbor_count == y.neighbor_count &&
         arrays_identical(x.traj_fut, y.traj_fut) &&
         arrays_identical(x.pose_fut, y.pose_fut) && x.img_w == y.img_w &&
         x.img_h == y.img_h;
}

bool files_identical(const fs::path& p0, const fs::path& p1) {
  std::ifstream f0(p0, std::ios::binary), f1(p1, std::ios::binary);
  if (!f0 || !f1) return false;
  std::ostringstream s0, s1;
  s0 << f0.rdbuf();
  s1 << f1.rdbuf();
  return s0.str() == s1.str();
}

// ---- criterion 1: gradient integrity ---------------------------------------

// Worst relative error of one loss over five random evaluation points.
double check_loss_grads(const char* which) {
  double worst = 0.0;
  for (int p = 0; p < 5; ++p) {
    Rng rng(mix_seed(41, static_cast<std::uint64_t>(p), std::hash<std::string>{}(which)));
    std::vector<DenseArray> point;
    std::function<a::Var(const std::vector<a::Var>&)> fn;
    const std::string name = which;
    if (name == "cluster") {
      point = {uniform_init(rng, {3, 4}, 1.0), uniform_init(rng, {3, 4}, 1.0)};
      fn = [](const std::vector<a::Var>& vs) { return clustering_loss(vs, 0.25); };
    } else if (name == "l1") {
      DenseArray act = uniform_init(rng, {3, 2}, 1.0);
      for (double& d : act.data) d += (d >= 0.0 ? 0.3 : -0.3);  // stay off |x| kink
      point = {act};
      fn = [](const std::vector<a::Var>& vs) { return l1_sparsity(vs); };
    } else if (name == "ce") {
      point = {uniform_init(rng, {3, 3}, 1.5)};
      fn = [](const std::vector<a::Var>& vs) {
        return cross_entropy(a::softmax_rows(vs[0]), {0, 1, 2});
      };
    } else {  // mse
      point = {uniform_init(rng, {2, 8}, 1.0)};
      DenseArray target = uniform_init(rng, {2, 8}, 1.0);
      fn = [target](const std::vector<a::Var>& vs) {
        return sequence_mse(vs[0], a::constant(target));
      };
    }
    const GradCheckResult res = gradient_check(fn, point);
    worst = std::max(worst, res.max_rel_err);
  }
  return worst;
}

// Worst relative error of the full encoder -> prototype -> heads -> total-loss
// pipeline over five random parameter points, at reduced dimensions.
double check_composite_grads(const fs::path& scratch) {
  GeneratorConfig g;
  g.t_obs = 3;
  g.t_pred = 2;
  g.ctx_size = 8;
  g.k_nb = 2;
  g.n_joints = 5;
  const fs::path dir = scratch / "grad_data";
  generate_dataset(g, 5, {{"train", 2}}, dir.string());
  const std::vector<Sample> samples = read_split(dir.string(), "train");

  TrainConfig base;
  base.prototypes = 3;
  base.embed_dim = 8;
  base.top_k = 1;
  base.t_obs = g.t_obs;
  base.t_pred = g.t_pred;
  base.batch_size = 2;
  base.attn_width = 8;
  base.attn_heads = 2;
  base.conv_channels = 2;
  base.noise_dim = 3;
  base.decoder_width = 8;
  base.best_of = 1;

  double worst = 0.0;
  for (int p = 0; p < 5; ++p) {
    TrainConfig cfg = base;
    cfg.seed = 100 + static_cast<std::uint64_t>(p);
    Model model = build_model(cfg, g);

    std::vector<BatchCache> caches;
    for (const Sample& s : samples) caches.push_back(featurize(model, s));
    std::vector<const BatchCache*> batch;
    for (const BatchCache& c : caches) batch.push_back(&c);

    Rng nrng(mix_seed(cfg.seed, 777));
    const DenseArray noise_traj = normal_array(nrng, {2, cfg.noise_dim});
    const DenseArray noise_pose = normal_array(nrng, {2, cfg.noise_dim});
    const DenseArray traj_target =
        stack_rows({&caches[0].traj_target, &caches[1].traj_target});
    const DenseArray pose_target =
        stack_rows({&caches[0].pose_target, &caches[1].pose_target});
    const std::vector<int> labels = {caches[0].action, caches[1].action};

    std::vector<DenseArray> point;
    for (const a::Var& v : model.store->vars()) point.push_back(v->value);

    LossWeights w;
    w.lambda_cluster = cfg.lambda_cluster;
    w.lambda_l1 = cfg.lambda_l1;
    w.w_action = cfg.weight_action;
    w.w_traj = cfg.weight_traj;
    w.w_pose = cfg.weight_pose;

    const auto fn = [&](const std::vector<a::Var>& vs) {
      model.store->replace_all(vs);
      const EncodedBatch enc = encode_batch(model, batch);
      LossTerms t;
      t.clustering = clustering_loss(enc.embeddings, cfg.temperature);
      t.l1 = l1_sparsity(enc.activations);
      t.action_ce = cross_entropy(enc.action_probs, labels);
      t.traj_mse = sequence_mse(predict_traj(model, enc, noise_traj),
                                a::constant(traj_target));
      t.pose_mse = sequence_mse(predict_pose(model, enc, noise_pose),
                                a::constant(pose_target));
      return total_loss(t, w);
    };
    const GradCheckResult res = gradient_check(fn, point);
    worst = std::max(worst, res.max_rel_err);
  }
  return worst;
}

bool criterion_1(const fs::path& scratch, std::string& detail) {
  const auto t0 = clock_type::now();
  double loss_err = 0.0;
  for (const char* which : {"cluster", "l1", "ce", "mse"})
    loss_err = std::max(loss_err, check_loss_grads(which));
  const double composite_err = check_composite_grads(scratch);
  const double secs = seconds_since(t0);
  const bool pass =
      loss_err < kGradTol && composite_err < kGradTol && secs < kGradBudgetSec;
  detail = "losses max rel err " + fmt(loss_err) + ", full model " +
           fmt(composite_err) + " (tol " + fmt(kGradTol) + "), " + fmt(secs) +
           "s (budget " + fmt(kGradBudgetSec) + "s)";
  return pass;
}

// ---- criterion 2: contrastive-loss closed forms -----------------------------

bool criterion_2(std::string& detail) {
  const double got_orth =
      clustering_loss({a::constant(DenseArray({2, 2}, {1, 0, 0, 1}))}, 1.0)
          ->value.data[0];
  const double want_orth = std::log1p(std::exp(-1.0));

  const double got_same =
      clustering_loss({a::constant(DenseArray({2, 2}, {1, 0, 1, 0}))}, 1.0)
          ->value.data[0];
  const double want_same = std::log(2.0);

  const double got_single =
      clustering_loss({a::constant(DenseArray({1, 3}, {0.3, -0.7, 0.2}))}, 1.0)
          ->value.data[0];

  const bool pass = std::abs(got_orth - want_orth) <= kClosedFormTol &&
                    std::abs(got_same - want_same) <= kClosedFormTol &&
                    got_single == 0.0;
  detail = "orthonormal pair " + fmt(got_orth) + " (want " + fmt(want_orth) +
           "), identical pair " + fmt(got_same) + " (want " + fmt(want_same) +
           "), single row " + fmt(got_single) + " (want exactly 0)";
  return pass;
}

// ---- criterion 3: top-k mono-semanticity closed forms ------------------------

bool criterion_3(std::string& detail) {
  const std::vector<double> spike = {1.0, 0.0, 0.0, 0.0};
  const double got_spike = top_k_ms(spike, 1).psi;
  const bool spike_ok = std::abs(got_spike - 3.0) <= kClosedFormTol;

  Rng rng(mix_seed(3, 1000));
  double worst_rel = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 5 + static_cast<int>(rng.below(36));
    std::vector<double> pool(static_cast<std::size_t>(n));
    for (double& d : pool) d = rng.normal();
    const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n - 1)));
    const double scale = rng.uniform(0.5, 3.0);
    const double shift = rng.uniform(-2.0, 2.0);
    std::vector<double> mapped(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) mapped[i] = scale * pool[i] + shift;
    const double base = top_k_ms(pool, k).psi;
    const double got = top_k_ms(mapped, k).psi;
    const double want = base / scale;
    const double rel = std::abs(got - want) / std::max(std::abs(want), 1e-12);
    worst_rel = std::max(worst_rel, rel);
  }

  const std::vector<double> flat = {2.0, 2.0, 2.0};
  const double got_flat = top_k_ms(flat, 2).psi;

  const bool pass = spike_ok && worst_rel <= kAffineRelTol && got_flat == 0.0;
  detail = "unit spike " + fmt(got_spike) + " (want 3), affine covariance worst rel " +
           fmt(worst_rel) + " (tol " + fmt(kAffineRelTol) + "), constant pool " +
           fmt(got_flat) + " (want exactly 0)";
  return pass;
}

// ---- criterion 4: end-to-end training quality -------------------------------

struct TrainedArtifacts {
  std::unique_ptr<Model> model;
  std::vector<Sample> train_split;
  std::vector<Sample> test_split;
  EvalReport test_report;
  fs::path ckpt;
  fs::path data_dir;
};

bool criterion_4(const fs::path& scratch, TrainedArtifacts& art, std::string& detail) {
  const auto t0 = clock_type::now();
  art.data_dir = scratch / "main_data";
  generate_dataset(GeneratorConfig{}, 42,
                   {{"train", 2000}, {"val", 250}, {"test", 250}},
                   art.data_dir.string());
  art.train_split = read_split(art.data_dir.string(), "train");
  art.test_split = read_split(art.data_dir.string(), "test");

  const TrainConfig cfg;  // stock configuration
  art.model = std::make_unique<Model>(
      build_model(cfg, read_manifest(art.data_dir.string()).generator));
  std::vector<AdamState> opt;
  train(*art.model, art.train_split, nullptr, &opt);
  art.test_report = evaluate(*art.model, art.test_split, "test");
  const double secs = seconds_since(t0);

  art.ckpt = scratch / "main_model.ckpt";
  save_checkpoint(*art.model, opt, art.ckpt.string());

  std::array<std::int64_t, 3> counts{};
  for (const Sample& s : art.test_split)
    counts[static_cast<std::size_t>(s.action)] += 1;
  const double majority =
      static_cast<double>(*std::max_element(counts.begin(), counts.end())) /
      static_cast<double>(art.test_split.size());

  const EvalReport& r = art.test_report;
  const bool pass = secs < kTrainBudgetSec && r.accuracy >= kMinAccuracy &&
                    majority <= kMaxMajority &&
                    r.traj_mse < r.baseline_traj_mse &&
                    r.pose_mse < r.baseline_pose_mse;
  detail = fmt(secs) + "s (budget " + fmt(kTrainBudgetSec) + "s), accuracy " +
           fmt(r.accuracy) + " (min " + fmt(kMinAccuracy) + ", majority class " +
           fmt(majority) + "), traj mse " + fmt(r.traj_mse) + " vs copy-last " +
           fmt(r.baseline_traj_mse) + ", pose mse " + fmt(r.pose_mse) +
           " vs copy-last " + fmt(r.baseline_pose_mse);
  return pass;
}

// ---- criterion 5: regularizers raise mono-semanticity ------------------------

bool criterion_5(const fs::path& scratch, std::vector<Sample>& reduced_train,
                 fs::path& reduced_dir, std::string& detail) {
  reduced_dir = scratch / "reduced_data";
  generate_dataset(GeneratorConfig{}, 7, {{"train", 1000}, {"val", 100}, {"test", 200}},
                   reduced_dir.string());
  reduced_train = read_split(reduced_dir.string(), "train");
  const std::vector<Sample> test_split = read_split(reduced_dir.string(), "test");
  const GeneratorConfig geom = read_manifest(reduced_dir.string()).generator;

  TrainConfig base;
  base.embed_dim = 32;
  base.attn_width = 32;
  base.attn_heads = 2;
  base.conv_channels = 4;
  base.noise_dim = 8;
  base.decoder_width = 64;
  base.epochs = 14;
  base.best_of = 2;

  int wins = 0;
  double drop_sum = 0.0;
  std::string per_seed;
  for (const std::uint64_t seed : {1ull, 2ull, 3ull}) {
    TrainConfig with_reg = base;
    with_reg.seed = seed;
    TrainConfig no_reg = with_reg;
    no_reg.lambda_cluster = 0.0;
    no_reg.lambda_l1 = 0.0;

    Model m_reg = build_model(with_reg, geom);
    train(m_reg, reduced_train, nullptr);
    const EvalReport r_reg = evaluate(m_reg, test_split, "test");

    Model m_off = build_model(no_reg, geom);
    train(m_off, reduced_train, nullptr);
    const EvalReport r_off = evaluate(m_off, test_split, "test");

    wins += (r_reg.mean_topk_ms > r_off.mean_topk_ms) ? 1 : 0;
    drop_sum += r_off.accuracy - r_reg.accuracy;
    per_seed += (per_seed.empty() ? "" : ", ") + std::string("seed ") +
                std::to_string(seed) + " ms " + fmt(r_reg.mean_topk_ms) + " vs " +
                fmt(r_off.mean_topk_ms);
  }
  const double mean_drop = drop_sum / 3.0;
  const bool pass = wins >= kRegSeedWins && mean_drop <= kMaxAccuracyDrop;
  detail = std::to_string(wins) + "/3 seeds favor regularizers (need " +
           std::to_string(kRegSeedWins) + "), mean accuracy drop " + fmt(mean_drop) +
           " (cap " + fmt(kMaxAccuracyDrop) + "); " + per_seed;
  return pass;
}

// ---- criterion 6: top prototypes align with planted concepts -----------------

bool criterion_6(const TrainedArtifacts& art, std::string& detail) {
  const Model& model = *art.model;
  const int k = model.cfg.top_k;
  const int n_concepts = model.geom.n_concepts;

  std::unordered_map<std::int64_t, const std::vector<int>*> concepts_by_id;
  for (const Sample& s : art.train_split) concepts_by_id[s.id] = &s.concepts;

  const auto pools = collect_activation_pools(model, art.train_split);

  std::vector<std::pair<double, int>> ranking;  // (score, prototype id)
  for (std::size_t p = 0; p < pools.size(); ++p) {
    std::vector<double> values;
    values.reserve(pools[p].size());
    for (const PoolEntry& e : pools[p]) values.push_back(e.activation);
    ranking.emplace_back(top_k_ms(values, k).psi, static_cast<int>(p));
  }
  std::stable_sort(ranking.begin(), ranking.end(), [](const auto& x, const auto& y) {
    if (x.first != y.first) return x.first > y.first;
    return x.second < y.second;
  });

  double purity_sum = 0.0;
  for (int rank = 0; rank < 5; ++rank) {
    const int p = ranking[static_cast<std::size_t>(rank)].second;
    std::vector<std::vector<int>> concept_sets;
    for (const PoolEntry& e : top_entries(pools[static_cast<std::size_t>(p)], k))
      concept_sets.push_back(*concepts_by_id.at(e.sample_id));
    purity_sum += concept_purity(concept_sets, n_concepts);
  }
  const double mean_top = purity_sum / 5.0;

  // Shuffled baseline: the purity of k pool entries drawn uniformly, ignoring
  // activations. Every sample appears once per modality, matching the pools.
  std::vector<const std::vector<int>*> population;
  population.reserve(art.train_split.size() * static_cast<std::size_t>(kModalityCount));
  for (const Sample& s : art.train_split)
    for (int m = 0; m < kModalityCount; ++m) population.push_back(&s.concepts);

  Rng rng(mix_seed(6, 1000));
  double base_sum = 0.0;
  for (int trial = 0; trial < kPurityShuffles; ++trial) {
    std::set<std::size_t> picked;
    while (picked.size() < static_cast<std::size_t>(k))
      picked.insert(static_cast<std::size_t>(rng.below(population.size())));
    std::vector<std::vector<int>> concept_sets;
    for (const std::size_t idx : picked) concept_sets.push_back(*population[idx]);
    base_sum += concept_purity(concept_sets, n_concepts);
  }
  const double baseline = base_sum / static_cast<double>(kPurityShuffles);

  const bool pass = mean_top >= kPurityFactor * baseline;
  detail = "top-5 prototypes mean purity " + fmt(mean_top) + " vs shuffled baseline " +
           fmt(baseline) + " — factor " + fmt(mean_top / baseline) + " (need " +
           fmt(kPurityFactor) + ")";
  return pass;
}

// ---- criterion 7: prototype masking ------------------------------------------

bool criterion_7(const TrainedArtifacts& art, std::string& detail) {
  const Model& model = *art.model;
  const int n = model.cfg.prototypes;

  // Keeping every prototype must be indistinguishable from no mask at all.
  std::vector<int> all_ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all_ids[static_cast<std::size_t>(i)] = i;
  EvalOptions keep_all;
  keep_all.keep = all_ids;
  const EvalReport rep_all = evaluate(model, art.test_split, "test", keep_all);
  const bool all_ok = reports_identical(rep_all, art.test_report);

  // Keeping none silences the bottleneck: the classifier sees zero logits
  // (ties resolve to class 0) and the generative heads run on zero features.
  EvalOptions keep_none;
  keep_none.keep = std::vector<int>{};
  const EvalReport rep_none = evaluate(model, art.test_split, "test", keep_none);

  std::int64_t zeros = 0;
  for (const Sample& s : art.test_split) zeros += (s.action == 0) ? 1 : 0;
  const double class0_freq =
      static_cast<double>(zeros) / static_cast<double>(art.test_split.size());

  Checkpoint silenced = load_checkpoint(art.ckpt.string());
  const a::Var protos = silenced.model.store->named("proto.p");
  std::fill(protos->value.data.begin(), protos->value.data.end(), 0.0);
  const EvalReport rep_zero = evaluate(silenced.model, art.test_split, "test");

  const bool none_ok = rep_none.accuracy == class0_freq &&
                       rep_none.traj_mse == rep_zero.traj_mse &&
                       rep_none.pose_mse == rep_zero.pose_mse;

  // Both selection criteria must yield a valid keep-5 report.
  bool select_ok = true;
  std::string select_note;
  for (const char* criterion : {"topk-ms", "linear-weight"}) {
    const std::vector<int> ids = select_prototypes(model, art.train_split, criterion, 5);
    const std::set<int> unique_ids(ids.begin(), ids.end());
    bool ok = ids.size() == 5 && unique_ids.size() == 5;
    for (const int id : ids) ok = ok && id >= 0 && id < n;
    EvalOptions opts;
    opts.keep = ids;
    const EvalReport rep = evaluate(model, art.test_split, "test", opts);
    ok = ok && report_finite(rep) &&
         rep.n_samples == static_cast<std::int64_t>(art.test_split.size());
    select_ok = select_ok && ok;
    select_note += std::string(", ") + criterion + " keep-5 accuracy " + fmt(rep.accuracy);
  }

  const bool pass = all_ok && none_ok && select_ok;
  detail = std::string("keep-all matches unmasked: ") + (all_ok ? "yes" : "NO") +
           "; keep-none accuracy " + fmt(rep_none.accuracy) + " vs class-0 share " +
           fmt(class0_freq) + ", generative errors match silenced bottleneck: " +
           (none_ok ? "yes" : "NO") + select_note;
  return pass;
}

// ---- criterion 8: determinism and persistence ---------------------------------

bool criterion_8(const fs::path& scratch, const TrainedArtifacts& art,
                 const std::vector<Sample>& reduced_train, const fs::path& reduced_dir,
                 std::string& detail) {
  // Same seed, same data -> byte-identical checkpoints.
  const GeneratorConfig geom = read_manifest(reduced_dir.string()).generator;
  TrainConfig small;
  small.prototypes = 8;
  small.embed_dim = 16;
  small.top_k = 3;
  small.batch_size = 8;
  small.epochs = 2;
  small.attn_width = 16;
  small.attn_heads = 2;
  small.conv_channels = 2;
  small.noise_dim = 4;
  small.decoder_width = 16;
  small.best_of = 2;
  small.seed = 11;
  const std::vector<Sample> subset(reduced_train.begin(), reduced_train.begin() + 200);

  std::array<fs::path, 2> twin_paths = {scratch / "twin_a.ckpt", scratch / "twin_b.ckpt"};
  for (int run = 0; run < 2; ++run) {
    Model m = build_model(small, geom);
    std::vector<AdamState> opt;
    train(m, subset, nullptr, &opt);
    save_checkpoint(m, opt, twin_paths[static_cast<std::size_t>(run)].string());
  }
  const bool twins_ok = files_identical(twin_paths[0], twin_paths[1]);

  // Reloading the main checkpoint must reproduce the in-memory evaluation.
  const Checkpoint rt = load_checkpoint(art.ckpt.string());
  const EvalReport rep_rt = evaluate(rt.model, art.test_split, "test");
  const double drift = report_drift(rep_rt, art.test_report);
  const bool reload_ok = drift <= kRoundTripTol &&
                         rep_rt.n_samples == art.test_report.n_samples &&
                         rep_rt.split == art.test_report.split;

  // Stored samples must round-trip field-exactly against fresh generation.
  const DatasetManifest manifest = read_manifest(reduced_dir.string());
  const std::vector<Sample> stored = read_split(reduced_dir.string(), "val");
  bool data_ok = !stored.empty();
  for (const Sample& s : stored) {
    const Sample fresh = generate_scenario(manifest.generator, manifest.base_seed,
                                           s.id, "val");
    if (!samples_identical(s, fresh)) {
      data_ok = false;
      break;
    }
  }

  const bool pass = twins_ok && reload_ok && data_ok;
  detail = std::string("twin training runs byte-identical: ") +
           (twins_ok ? "yes" : "NO") + "; reload metric drift " + fmt(drift) +
           " (tol " + fmt(kRoundTripTol) + "); stored samples match regeneration: " +
           (data_ok ? "yes" : "NO");
  return pass;
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "spn-acceptance";
  std::error_code ec;
  fs::remove_all(scratch, ec);
  fs::create_directories(scratch);

  int failures = 0;
  auto gate = [&](int id, const char* name, bool pass, const std::string& detail) {
    report(id, name, pass, detail);
    failures += pass ? 0 : 1;
  };

  try {
    std::string detail;

    bool ok = criterion_1(scratch, detail);
    gate(1, "gradient integrity", ok, detail);

    ok = criterion_2(detail);
    gate(2, "contrastive-loss closed forms", ok, detail);

    ok = criterion_3(detail);
    gate(3, "top-k mono-semanticity closed forms", ok, detail);

    TrainedArtifacts art;
    ok = criterion_4(scratch, art, detail);
    gate(4, "end-to-end training quality", ok, detail);

    std::vector<Sample> reduced_train;
    fs::path reduced_dir;
    ok = criterion_5(scratch, reduced_train, reduced_dir, detail);
    gate(5, "regularizers raise mono-semanticity", ok, detail);

    ok = criterion_6(art, detail);
    gate(6, "top prototypes align with planted concepts", ok, detail);

    ok = criterion_7(art, detail);
    gate(7, "prototype masking", ok, detail);

    ok = criterion_8(scratch, art, reduced_train, reduced_dir, detail);
    gate(8, "determinism and persistence", ok, detail);
  } catch (const std::exception& e) {
    std::cout << "[FAIL] acceptance aborted: " << e.what() << std::endl;
    return 1;
  }

  std::cout << (failures == 0 ? "acceptance: all 8 criteria passed"
                              : "acceptance: " + std::to_string(8 - failures) +
                                    "/8 criteria passed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
