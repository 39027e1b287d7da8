// Command-line workbench for the sparse prototype network: dataset
// generation, training, evaluation, explanation export, ablation sweeps,
// and standalone activation-pool scoring.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spn/errors.hpp"
#include "spn/metrics.hpp"
#include "spn/trainer.hpp"

namespace {

using spn::ConfigError;
using spn::ParseError;

// ---------------------------------------------------------------------------
// config resolution: flag > config file > SPN_SEED environment > default

void apply_config_file(spn::TrainConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw spn::IoError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(path + " line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError(path + " line " + std::to_string(lineno) + ": empty key");
    try {
      apply_config_kv(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

std::optional<std::uint64_t> env_seed() {
  const char* env = std::getenv("SPN_SEED");
  if (!env || *env == '\0') return std::nullopt;
  spn::TrainConfig probe;
  apply_config_kv(probe, "seed", env);  // reuse the strict unsigned parser
  return probe.seed;
}

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "flat 'key = value' config file");
    cmd->add_option("--set", sets, "extra 'key=value' override, repeatable")
        ->type_name("KEY=VALUE");
    cmd->add_option("--seed", seed, "seed override (wins over --set and config file)");
  }

  spn::TrainConfig resolve() const {
    spn::TrainConfig cfg;
    if (const auto s = env_seed()) cfg.seed = *s;
    if (!config_path.empty()) apply_config_file(cfg, config_path);
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    return cfg;
  }
};

// ---------------------------------------------------------------------------
// shared plumbing

void emit_report(const nlohmann::json& j, const std::string& report_path) {
  const std::string text = j.dump(2);
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    if (!out) throw spn::IoError("cannot open report file for writing: " + report_path);
    out << text << '\n';
    if (!out.good()) throw spn::IoError("report write failed: " + report_path);
  }
  std::cout << text << '\n';
}

spn::Checkpoint load_compatible_checkpoint(const std::string& ckpt_path,
                                           const spn::DatasetManifest& manifest) {
  spn::Checkpoint ck = spn::load_checkpoint(ckpt_path);
  if (spn::generator_config_to_json(ck.model.geom) !=
      spn::generator_config_to_json(manifest.generator))
    throw ConfigError("checkpoint geometry does not match the dataset at hand");
  return ck;
}

nlohmann::json report_to_json(const spn::EvalReport& r) {
  return nlohmann::json::parse(spn::eval_report_json(r));
}

// ---------------------------------------------------------------------------
// subcommands

struct DatagenArgs {
  std::string out;
  std::int64_t n_train = 2000, n_val = 250, n_test = 250;
  std::optional<std::uint64_t> seed;
};

int run_datagen(const DatagenArgs& a) {
  const std::uint64_t seed = a.seed ? *a.seed : env_seed().value_or(42);
  const spn::GeneratorConfig geom;
  std::filesystem::create_directories(a.out);
  spn::generate_dataset(geom, seed,
                        {{"train", a.n_train}, {"val", a.n_val}, {"test", a.n_test}}, a.out);
  emit_report(nlohmann::json{{"dataset", a.out},
                             {"seed", seed},
                             {"splits",
                              {{"train", a.n_train}, {"val", a.n_val}, {"test", a.n_test}}}},
              "");
  return 0;
}

struct TrainArgs {
  ConfigFlags cfg;
  std::string data, out;
};

int run_train(const TrainArgs& a) {
  const spn::TrainConfig cfg = a.cfg.resolve();
  const spn::DatasetManifest manifest = spn::read_manifest(a.data);
  spn::Model model = spn::build_model(cfg, manifest.generator);
  const std::vector<spn::Sample> split = spn::read_split(a.data, "train");
  std::vector<spn::AdamState> opt;
  const spn::TrainResult result = spn::train(model, split, &std::cout, &opt);
  std::optional<spn::LossReport> final_loss;
  if (!result.epochs.empty()) final_loss = result.epochs.back().mean;
  if (const auto parent = std::filesystem::path(a.out).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  spn::save_checkpoint(model, opt, a.out, final_loss);
  nlohmann::json summary{{"checkpoint", a.out}, {"epochs", static_cast<int>(result.epochs.size())}};
  summary["final_total"] =
      final_loss ? nlohmann::json(final_loss->total) : nlohmann::json(nullptr);
  std::cout << summary.dump() << '\n';
  return 0;
}

struct EvalArgs {
  std::string ckpt, data, split = "val", report;
  std::vector<int> keep;
  bool keep_given = false;
};

int run_eval(const EvalArgs& a) {
  const spn::DatasetManifest manifest = spn::read_manifest(a.data);
  const spn::Checkpoint ck = load_compatible_checkpoint(a.ckpt, manifest);
  const std::vector<spn::Sample> samples = spn::read_split(a.data, a.split);
  spn::EvalOptions opts;
  if (a.keep_given) opts.keep = a.keep;
  const spn::EvalReport r = spn::evaluate(ck.model, samples, a.split, opts);
  emit_report(report_to_json(r), a.report);
  return 0;
}

struct ExplainArgs {
  std::string ckpt, data, split = "val", report;
  int top_k = 0;  // 0: use the checkpoint's configured top_k
};

int run_explain(const ExplainArgs& a) {
  const spn::DatasetManifest manifest = spn::read_manifest(a.data);
  const spn::Checkpoint ck = load_compatible_checkpoint(a.ckpt, manifest);
  const std::vector<spn::Sample> samples = spn::read_split(a.data, a.split);
  const int k = a.top_k > 0 ? a.top_k : ck.model.cfg.top_k;

  std::unordered_map<std::int64_t, const std::vector<int>*> concepts_by_id;
  for (const spn::Sample& s : samples) concepts_by_id[s.id] = &s.concepts;

  const auto pools = spn::collect_activation_pools(ck.model, samples);
  nlohmann::json protos = nlohmann::json::array();
  double psi_sum = 0.0;
  for (std::size_t p = 0; p < pools.size(); ++p) {
    std::vector<double> values;
    values.reserve(pools[p].size());
    for (const spn::PoolEntry& e : pools[p]) values.push_back(e.activation);
    const spn::TopKMsStats stats = spn::top_k_ms(values, k);
    psi_sum += stats.psi;

    const std::vector<spn::PoolEntry> top = spn::top_entries(pools[p], k);
    nlohmann::json top_json = nlohmann::json::array();
    std::vector<std::vector<int>> concept_sets;
    std::vector<int> concept_counts(static_cast<std::size_t>(manifest.generator.n_concepts), 0);
    for (std::size_t rank = 0; rank < top.size(); ++rank) {
      const auto& concepts = *concepts_by_id.at(top[rank].sample_id);
      concept_sets.push_back(concepts);
      for (const int c : concepts) concept_counts[static_cast<std::size_t>(c)] += 1;
      top_json.push_back({{"rank", rank + 1},
                          {"activation", top[rank].activation},
                          {"sample_id", top[rank].sample_id},
                          {"modality", spn::modality_name(top[rank].modality)},
                          {"concepts", concepts}});
    }

    // activation-versus-rank table: the pool's leading order statistics
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const std::size_t table_len = std::min<std::size_t>(sorted.size(), 32);
    sorted.resize(table_len);

    protos.push_back({{"id", p},
                      {"psi", stats.psi},
                      {"pool_mean", stats.mean},
                      {"pool_variance", stats.variance},
                      {"pool_size", pools[p].size()},
                      {"purity", spn::concept_purity(concept_sets, manifest.generator.n_concepts)},
                      {"top", std::move(top_json)},
                      {"concept_counts", concept_counts},
                      {"activation_vs_rank", sorted}});
  }

  emit_report(nlohmann::json{{"split", a.split},
                             {"n_samples", samples.size()},
                             {"k", k},
                             {"mean_topk_ms", psi_sum / static_cast<double>(pools.size())},
                             {"prototypes", std::move(protos)}},
              a.report);
  return 0;
}

struct AblateRegArgs {
  ConfigFlags cfg;
  std::string data, split = "val", report;
};

int run_ablate_reg(const AblateRegArgs& a) {
  const spn::TrainConfig cfg = a.cfg.resolve();
  const spn::DatasetManifest manifest = spn::read_manifest(a.data);
  const std::vector<spn::Sample> train_split = spn::read_split(a.data, "train");
  const std::vector<spn::Sample> eval_split = spn::read_split(a.data, a.split);
  const std::vector<spn::AblationRow> rows = spn::ablate_regularizers(
      cfg, manifest.generator, train_split, eval_split, a.split, &std::cout);
  nlohmann::json out = nlohmann::json::array();
  for (const spn::AblationRow& row : rows)
    out.push_back({{"lambda_cluster", row.lambda_cluster},
                   {"lambda_l1", row.lambda_l1},
                   {"report", report_to_json(row.report)}});
  emit_report(out, a.report);
  return 0;
}

struct AblatePartialArgs {
  std::string ckpt, data, split = "val", criterion = "topk-ms", report;
  int keep = 0;
};

int run_ablate_partial(const AblatePartialArgs& a) {
  const spn::DatasetManifest manifest = spn::read_manifest(a.data);
  const spn::Checkpoint ck = load_compatible_checkpoint(a.ckpt, manifest);
  // selection statistics come from the training split; the held-out split
  // is only scored
  const std::vector<spn::Sample> train_split = spn::read_split(a.data, "train");
  const std::vector<spn::Sample> eval_split = spn::read_split(a.data, a.split);
  const std::vector<int> kept =
      spn::select_prototypes(ck.model, train_split, a.criterion, a.keep);
  spn::EvalOptions opts;
  opts.keep = kept;
  const spn::EvalReport masked = spn::evaluate(ck.model, eval_split, a.split, opts);
  const spn::EvalReport full = spn::evaluate(ck.model, eval_split, a.split);
  emit_report(nlohmann::json{{"criterion", a.criterion},
                             {"keep", a.keep},
                             {"kept_ids", kept},
                             {"report", report_to_json(masked)},
                             {"full_report", report_to_json(full)}},
              a.report);
  return 0;
}

struct MsArgs {
  std::string activations;
  int k = 5;
};

int run_ms(const MsArgs& a) {
  std::ifstream file;
  std::istream* in = &std::cin;
  if (a.activations != "-") {
    file.open(a.activations);
    if (!file) throw spn::IoError("cannot open activation file: " + a.activations);
    in = &file;
  }
  std::string line;
  int lineno = 0;
  bool any = false;
  std::ostringstream out;
  while (std::getline(*in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    std::vector<double> pool;
    std::string token;
    while (row >> token) {
      try {
        std::size_t pos = 0;
        pool.push_back(std::stod(token, &pos));
        if (pos != token.size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ParseError("activation file line " + std::to_string(lineno) +
                         ": cannot parse value '" + token + "'");
      }
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", spn::top_k_ms(pool, a.k).psi);
    out << buf << '\n';
    any = true;
  }
  if (!any) throw ParseError("activation file holds no pools");
  std::cout << out.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse prototype network workbench"};
  app.require_subcommand(1);

  DatagenArgs dg;
  CLI::App* datagen = app.add_subcommand("datagen", "generate a synthetic dataset");
  datagen->add_option("--out", dg.out, "output dataset directory")->required();
  datagen->add_option("--n-train", dg.n_train, "training samples")->check(CLI::NonNegativeNumber);
  datagen->add_option("--n-val", dg.n_val, "validation samples")->check(CLI::NonNegativeNumber);
  datagen->add_option("--n-test", dg.n_test, "test samples")->check(CLI::NonNegativeNumber);
  datagen->add_option("--seed", dg.seed, "generator base seed");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
  train->add_option("--data", tr.data, "dataset directory")->required();
  train->add_option("--out", tr.out, "checkpoint output path")->required();
  tr.cfg.attach(train);

  EvalArgs ev;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval->add_option("--ckpt", ev.ckpt, "checkpoint path")->required();
  eval->add_option("--data", ev.data, "dataset directory")->required();
  eval->add_option("--split", ev.split, "split name (default val)");
  eval->add_option("--report", ev.report, "also write the JSON report here");
  eval->add_option("--keep", ev.keep, "prototype ids to keep active, repeatable");

  ExplainArgs ex;
  CLI::App* explain = app.add_subcommand("explain", "export prototype explanations");
  explain->add_option("--ckpt", ex.ckpt, "checkpoint path")->required();
  explain->add_option("--data", ex.data, "dataset directory")->required();
  explain->add_option("--split", ex.split, "split name (default val)");
  explain->add_option("--top-k", ex.top_k, "entries per prototype (default: config top_k)")
      ->check(CLI::PositiveNumber);
  explain->add_option("--report", ex.report, "also write the JSON report here");

  AblateRegArgs ar;
  CLI::App* ablate_reg =
      app.add_subcommand("ablate-reg", "train the 2x2 regularizer on/off grid");
  ablate_reg->add_option("--data", ar.data, "dataset directory")->required();
  ablate_reg->add_option("--split", ar.split, "evaluation split (default val)");
  ablate_reg->add_option("--report", ar.report, "also write the JSON report here");
  ar.cfg.attach(ablate_reg);

  AblatePartialArgs ap;
  CLI::App* ablate_partial =
      app.add_subcommand("ablate-partial", "evaluate with only selected prototypes");
  ablate_partial->add_option("--ckpt", ap.ckpt, "checkpoint path")->required();
  ablate_partial->add_option("--data", ap.data, "dataset directory")->required();
  ablate_partial->add_option("--split", ap.split, "evaluation split (default val)");
  ablate_partial
      ->add_option("--criterion", ap.criterion, "selection rule (default topk-ms)")
      ->check(CLI::IsMember({"topk-ms", "linear-weight"}));
  ablate_partial->add_option("--keep", ap.keep, "number of prototypes kept")->required();
  ablate_partial->add_option("--report", ap.report, "also write the JSON report here");

  MsArgs ms;
  CLI::App* ms_cmd =
      app.add_subcommand("ms", "score activation pools from a file ('-' reads stdin)");
  ms_cmd->add_option("--activations", ms.activations, "pool file, one prototype per line")
      ->required();
  ms_cmd->add_option("--k", ms.k, "top-k size")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help/version exit 0; every usage error exits 2
  }

  try {
    ev.keep_given = eval->count("--keep") > 0;
    if (datagen->parsed()) return run_datagen(dg);
    if (train->parsed()) return run_train(tr);
    if (eval->parsed()) return run_eval(ev);
    if (explain->parsed()) return run_explain(ex);
    if (ablate_reg->parsed()) return run_ablate_reg(ar);
    if (ablate_partial->parsed()) return run_ablate_partial(ap);
    if (ms_cmd->parsed()) return run_ms(ms);
    std::cerr << "error: no subcommand selected\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
