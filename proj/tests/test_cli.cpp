#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "spn/trainer.hpp"

namespace {

struct Cmd {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the workbench binary through the shell; `env_prefix` lets a case pin
// or clear environment variables. SPN_SEED is cleared unless the case sets it.
Cmd run_cli(const std::string& args, const std::string& env_prefix = "env -u SPN_SEED") {
  const char* bin = std::getenv("SPN_CLI_PATH");
  REQUIRE_MESSAGE(bin != nullptr, "SPN_CLI_PATH must point at the workbench binary");
  static int counter = 0;
  const std::string tag = std::to_string(getpid()) + "_" + std::to_string(counter++);
  const std::string out_path = "/tmp/spn_cli_out_" + tag;
  const std::string err_path = "/tmp/spn_cli_err_" + tag;
  const std::string cmd =
      env_prefix + " " + std::string(bin) + " " + args + " >" + out_path + " 2>" + err_path;
  const int raw = std::system(cmd.c_str());
  Cmd r;
  if (WIFEXITED(raw)) r.code = WEXITSTATUS(raw);
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  std::remove(out_path.c_str());
  std::remove(err_path.c_str());
  return r;
}

const std::string kSmallTrainFlags =
    "--set epochs=1 --set prototypes=8 --set embed_dim=16 --set attn_width=16 "
    "--set attn_heads=2 --set conv_channels=4 --set noise_dim=4 --set decoder_width=32 "
    "--set batch_size=8 --set best_of=2 --set top_k=3";

// One shared tiny dataset + checkpoint, built once.
struct Fixture {
  std::string data = "/tmp/spn_cli_fix_data";
  std::string ckpt = "/tmp/spn_cli_fix_run/model.spn";

  Fixture() {
    std::filesystem::remove_all(data);
    std::filesystem::remove_all("/tmp/spn_cli_fix_run");
    Cmd dg = run_cli("datagen --out " + data + " --n-train 48 --n-val 16 --n-test 8 --seed 7");
    REQUIRE(dg.code == 0);
    Cmd tr = run_cli("train --data " + data + " --out " + ckpt + " " + kSmallTrainFlags +
                     " --seed 7");
    REQUIRE_MESSAGE(tr.code == 0, tr.err);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("ms scores pools line by line") {
  {
    std::ofstream pool("/tmp/spn_cli_pool.txt");
    pool << "1 0 0 0\n";
    pool << "2 2 2 2\n";
  }
  Cmd r = run_cli("ms --activations /tmp/spn_cli_pool.txt --k 1");
  CHECK(r.code == 0);
  CHECK(r.out == "3\n0\n");

  Cmd junk = run_cli("ms --activations /tmp/spn_cli_pool.txt --k 0");
  CHECK(junk.code == 2);  // flag validator rejects a non-positive k

  {
    std::ofstream pool("/tmp/spn_cli_pool.txt");
    pool << "1 oops 3\n";
  }
  Cmd bad = run_cli("ms --activations /tmp/spn_cli_pool.txt --k 1");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("line 1") != std::string::npos);

  Cmd missing = run_cli("ms --activations /tmp/spn_cli_no_such_pool.txt --k 1");
  CHECK(missing.code == 1);
  std::remove("/tmp/spn_cli_pool.txt");
}

TEST_CASE("usage errors exit with status 2 and help with 0") {
  CHECK(run_cli("definitely-not-a-subcommand").code == 2);
  CHECK(run_cli("eval --ckpt x").code == 2);  // missing required --data
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("ablate-partial --ckpt x --data y --keep 2 --criterion bogus").code == 2);
}

TEST_CASE("datagen is deterministic per seed") {
  const std::string d1 = "/tmp/spn_cli_dg_a", d2 = "/tmp/spn_cli_dg_b";
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
  Cmd r1 = run_cli("datagen --out " + d1 + " --n-train 6 --n-val 3 --n-test 2 --seed 99");
  Cmd r2 = run_cli("datagen --out " + d2 + " --n-train 6 --n-val 3 --n-test 2 --seed 99");
  REQUIRE(r1.code == 0);
  REQUIRE(r2.code == 0);
  const nlohmann::json j = nlohmann::json::parse(r1.out);
  CHECK(j.at("seed") == 99);
  for (const char* f : {"manifest.json", "train.jsonl", "val.jsonl", "test.jsonl"})
    CHECK(slurp(d1 + "/" + f) == slurp(d2 + "/" + f));

  Cmd r3 = run_cli("datagen --out " + d2 + " --n-train 6 --n-val 3 --n-test 2 --seed 100");
  REQUIRE(r3.code == 0);
  CHECK(slurp(d1 + "/train.jsonl") != slurp(d2 + "/train.jsonl"));
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d2);
}

TEST_CASE("train emits epoch logs and a checkpoint summary") {
  const Fixture& f = fixture();
  CHECK(std::filesystem::exists(f.ckpt));
  const std::string tmp_ckpt = "/tmp/spn_cli_train_again.spn";
  Cmd tr = run_cli("train --data " + f.data + " --out " + tmp_ckpt + " " + kSmallTrainFlags +
                   " --seed 7");
  REQUIRE(tr.code == 0);
  std::istringstream lines(tr.out);
  std::string line;
  int epoch_lines = 0;
  nlohmann::json summary;
  while (std::getline(lines, line)) {
    const nlohmann::json j = nlohmann::json::parse(line);
    if (j.contains("epoch"))
      ++epoch_lines;
    else
      summary = j;
  }
  CHECK(epoch_lines == 1);
  CHECK(summary.at("checkpoint") == tmp_ckpt);
  CHECK(summary.at("epochs") == 1);
  CHECK(summary.at("final_total").is_number());

  // retraining with the same flags rewrites a byte-identical checkpoint
  CHECK(slurp(tmp_ckpt) == slurp(f.ckpt));
  std::remove(tmp_ckpt.c_str());
}

TEST_CASE("eval writes a full report file and honors --keep") {
  const Fixture& f = fixture();
  const std::string report = "/tmp/spn_cli_eval_report.json";
  Cmd ev = run_cli("eval --ckpt " + f.ckpt + " --data " + f.data + " --split val --report " +
                   report);
  REQUIRE_MESSAGE(ev.code == 0, ev.err);
  const nlohmann::json j = nlohmann::json::parse(ev.out);
  CHECK(nlohmann::json::parse(slurp(report)) == j);
  for (const char* field : {"accuracy", "f1", "traj_mse", "pose_mse", "baseline_traj_mse",
                            "baseline_pose_mse", "mean_topk_ms", "proto_psi", "proto_purity",
                            "split", "n_samples"})
    CHECK_MESSAGE(j.contains(field), field);
  CHECK(j.at("n_samples") == 16);
  CHECK(j.at("split") == "val");
  CHECK(j.at("proto_psi").size() == 8);

  // re-running rewrites the report byte-identically
  const std::string before = slurp(report);
  Cmd again = run_cli("eval --ckpt " + f.ckpt + " --data " + f.data + " --split val --report " +
                      report);
  REQUIRE(again.code == 0);
  CHECK(slurp(report) == before);

  Cmd masked = run_cli("eval --ckpt " + f.ckpt + " --data " + f.data +
                       " --split val --keep 0 --keep 3");
  REQUIRE(masked.code == 0);
  CHECK(nlohmann::json::parse(masked.out).at("accuracy").is_number());

  Cmd bad_split = run_cli("eval --ckpt " + f.ckpt + " --data " + f.data + " --split nope");
  CHECK(bad_split.code == 1);
  std::remove(report.c_str());
}

TEST_CASE("explain exports ranked prototype evidence") {
  const Fixture& f = fixture();
  Cmd ex = run_cli("explain --ckpt " + f.ckpt + " --data " + f.data + " --split val --top-k 3");
  REQUIRE_MESSAGE(ex.code == 0, ex.err);
  const nlohmann::json j = nlohmann::json::parse(ex.out);
  CHECK(j.at("k") == 3);
  CHECK(j.at("n_samples") == 16);
  REQUIRE(j.at("prototypes").size() == 8);
  for (const auto& p : j.at("prototypes")) {
    CHECK(p.at("pool_size") == 16 * 5);
    CHECK(p.at("top").size() == 3);
    CHECK(p.at("concept_counts").size() == 8);
    CHECK(p.at("activation_vs_rank").size() == 32);
    CHECK(p.at("purity").is_number());
    const auto& top = p.at("top");
    for (std::size_t i = 0; i < top.size(); ++i) {
      CHECK(top[i].at("rank") == i + 1);
      CHECK(top[i].at("sample_id").is_number());
      CHECK(top[i].at("modality").is_string());
      CHECK(top[i].at("concepts").is_array());
    }
    // descending activations
    CHECK(top[0].at("activation").get<double>() >= top[1].at("activation").get<double>());
    CHECK(top[1].at("activation").get<double>() >= top[2].at("activation").get<double>());
  }
}

TEST_CASE("ablate-partial reports kept ids next to full-model numbers") {
  const Fixture& f = fixture();
  Cmd ab = run_cli("ablate-partial --ckpt " + f.ckpt + " --data " + f.data +
                   " --split val --criterion linear-weight --keep 4");
  REQUIRE_MESSAGE(ab.code == 0, ab.err);
  const nlohmann::json j = nlohmann::json::parse(ab.out);
  CHECK(j.at("criterion") == "linear-weight");
  CHECK(j.at("keep") == 4);
  CHECK(j.at("kept_ids").size() == 4);
  CHECK(j.at("report").at("n_samples") == 16);
  CHECK(j.at("full_report").at("accuracy").is_number());

  // keeping everything reproduces the unmasked report exactly
  Cmd all = run_cli("ablate-partial --ckpt " + f.ckpt + " --data " + f.data +
                    " --split val --criterion topk-ms --keep 8");
  REQUIRE(all.code == 0);
  const nlohmann::json ja = nlohmann::json::parse(all.out);
  CHECK(ja.at("report") == ja.at("full_report"));
}

TEST_CASE("ablate-reg trains the four regularizer combinations") {
  const Fixture& f = fixture();
  Cmd ab = run_cli("ablate-reg --data " + f.data + " --split val " + kSmallTrainFlags +
                   " --set batch_size=16 --seed 7");
  REQUIRE_MESSAGE(ab.code == 0, ab.err);
  // stdout interleaves epoch logs with the final array; recover the array
  const auto bracket = ab.out.find("\n[");
  REQUIRE(bracket != std::string::npos);
  const nlohmann::json rows = nlohmann::json::parse(ab.out.substr(bracket));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].at("lambda_cluster") == 0.0);
  CHECK(rows[0].at("lambda_l1") == 0.0);
  CHECK(rows[3].at("lambda_cluster") == 0.001);
  CHECK(rows[3].at("lambda_l1") == 0.01);
  for (const auto& row : rows) CHECK(row.at("report").at("mean_topk_ms").is_number());
}

TEST_CASE("seed resolution: flag beats set beats config file beats environment") {
  const Fixture& f = fixture();
  const std::string cfg_path = "/tmp/spn_cli_seed.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "# comment line\n\nseed = 5\nepochs = 0\n";
  }
  const std::string base = "--data " + f.data + " " + kSmallTrainFlags + " --set epochs=0";
  const std::string ckpt = "/tmp/spn_cli_seed_probe.spn";
  auto seed_of = [&](const std::string& extra, const std::string& env) {
    Cmd tr = run_cli("train " + base + " --out " + ckpt + " " + extra, env);
    REQUIRE_MESSAGE(tr.code == 0, tr.err);
    return spn::load_checkpoint(ckpt).model.cfg.seed;
  };
  CHECK(seed_of("", "env -u SPN_SEED") == 42);                       // built-in default
  CHECK(seed_of("", "env SPN_SEED=7") == 7);                         // environment fallback
  CHECK(seed_of("--config " + cfg_path, "env SPN_SEED=7") == 5);     // config file wins over env
  CHECK(seed_of("--config " + cfg_path + " --set seed=9", "env SPN_SEED=7") == 9);
  CHECK(seed_of("--config " + cfg_path + " --set seed=9 --seed 11", "env SPN_SEED=7") == 11);

  Cmd bad_env = run_cli("train " + base + " --out " + ckpt, "env SPN_SEED=abc");
  CHECK(bad_env.code == 2);
  std::remove(cfg_path.c_str());
  std::remove(ckpt.c_str());
}

TEST_CASE("config file diagnostics carry the line number") {
  const Fixture& f = fixture();
  const std::string cfg_path = "/tmp/spn_cli_bad.cfg";
  {
    std::ofstream cfg(cfg_path);
    cfg << "epochs = 0\nnot a key value line\n";
  }
  Cmd tr = run_cli("train --data " + f.data + " --out /tmp/spn_cli_never.spn --config " +
                   cfg_path);
  CHECK(tr.code == 2);
  CHECK(tr.err.find("line 2") != std::string::npos);

  {
    std::ofstream cfg(cfg_path);
    cfg << "warp_speed = 9\n";
  }
  Cmd unknown = run_cli("train --data " + f.data + " --out /tmp/spn_cli_never.spn --config " +
                        cfg_path);
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("warp_speed") != std::string::npos);

  Cmd bad_set = run_cli("train --data " + f.data +
                        " --out /tmp/spn_cli_never.spn --set epochs=soon");
  CHECK(bad_set.code == 2);
  std::remove(cfg_path.c_str());
}

TEST_CASE("runtime failures exit with status 1") {
  CHECK(run_cli("eval --ckpt /tmp/spn_cli_missing.spn --data /tmp/spn_cli_missing_dir").code == 1);
  CHECK(run_cli("train --data /tmp/spn_cli_missing_dir --out /tmp/spn_cli_never.spn").code == 1);
}
