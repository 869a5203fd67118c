#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "latro/cli.hpp"

using namespace latro;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("latro_cli_test_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig tiny_parity_config(const fs::path& out) {
  RunConfig cfg;
  cfg.seed = 4;
  cfg.threads = 1;
  cfg.task.name = "parity-scratchpad";
  cfg.task.length_lo = 3;
  cfg.task.length_hi = 5;
  cfg.task.train_size = 24;
  cfg.task.eval_size = 8;
  cfg.model.model_class = "tabular";
  cfg.model.context_order = 1;
  cfg.trainer.k = 4;
  cfg.trainer.epochs = 2;
  cfg.trainer.minibatch_size = 4;
  cfg.trainer.learning_rate = 0.05;
  cfg.warm_start_steps = 0;
  cfg.io.output_dir = out.string();
  return cfg;
}

}  // namespace

TEST_CASE("strict config parsing rejects unknown keys with the key path") {
  nlohmann::json j = {{"seed", 1}, {"trainer", {{"k", 4}, {"beta_kll", 0.1}}}};
  try {
    parse_run_config(j);
    FAIL("expected rejection");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("trainer.beta_kll") != std::string::npos);
  }
  nlohmann::json top = {{"sneed", 1}};
  CHECK_THROWS_AS(parse_run_config(top), ConfigError);
}

TEST_CASE("gen-data writes byte-identical outputs across invocations") {
  TempDir a, b;
  RunConfig cfg = tiny_parity_config(a.path / "missing" / "nested");  // dir gets created
  cfg.task.name = "chain-addition";
  cfg.task.operand_count = 3;
  cfg.task.train_size = 60;
  cfg.task.eval_size = 20;
  CHECK(cli::cmd_gen_data(cfg) == 0);
  RunConfig cfg2 = cfg;
  cfg2.io.output_dir = (b.path / "out").string();
  CHECK(cli::cmd_gen_data(cfg2) == 0);
  CHECK(slurp(a.path / "missing" / "nested" / "train.jsonl") ==
        slurp(b.path / "out" / "train.jsonl"));
  CHECK(slurp(a.path / "missing" / "nested" / "eval.jsonl") ==
        slurp(b.path / "out" / "eval.jsonl"));
  CHECK(fs::exists(a.path / "missing" / "nested" / "summary.txt"));
  CHECK(fs::exists(a.path / "missing" / "nested" / "resolved-config.json"));
}

TEST_CASE("gen-data rejects invalid task parameters naming the field") {
  TempDir t;
  RunConfig cfg = tiny_parity_config(t.path);
  cfg.task.name = "chain-addition";
  cfg.task.operand_count = 1;
  try {
    cli::cmd_gen_data(cfg);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("operand_count") != std::string::npos);
  }
}

TEST_CASE("train/eval pipeline with cross-file consistency") {
  TempDir t;
  RunConfig gen = tiny_parity_config(t.path / "data");
  REQUIRE(cli::cmd_gen_data(gen) == 0);

  RunConfig tr = tiny_parity_config(t.path / "run");
  tr.io.train_data = (t.path / "data" / "train.jsonl").string();
  tr.io.eval_data = (t.path / "data" / "eval.jsonl").string();
  REQUIRE(cli::cmd_train(tr, "latro") == 0);

  CHECK(fs::exists(t.path / "run" / "metrics.jsonl"));
  CHECK(fs::exists(t.path / "run" / "checkpoints" / "best.ckpt"));
  CHECK(fs::exists(t.path / "run" / "resolved-config.json"));

  // recorded best accuracy from the metrics stream
  double best_recorded = -1.0;
  {
    std::ifstream in(t.path / "run" / "metrics.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      nlohmann::json row = nlohmann::json::parse(line);
      if (row.at("kind") == "epoch") {
        best_recorded = std::max(best_recorded, row.at("eval_greedy_accuracy").get<double>());
      }
    }
  }
  REQUIRE(best_recorded >= 0.0);

  RunConfig ev = tiny_parity_config(t.path / "eval-out");
  ev.io.eval_data = tr.io.eval_data;
  ev.io.checkpoint = (t.path / "run" / "checkpoints" / "best.ckpt").string();
  ev.eval.k_list = {1, 2};
  REQUIRE(cli::cmd_eval(ev) == 0);
  nlohmann::json report = nlohmann::json::parse(slurp(t.path / "eval-out" / "report.json"));
  CHECK(report.at("greedy_accuracy").get<double>() == best_recorded);
  CHECK(fs::exists(t.path / "eval-out" / "maj_at_k.csv"));

  // single-point length sweep equals the eval accuracy at the same cap
  RunConfig ab = tiny_parity_config(t.path / "ablate-out");
  ab.io.eval_data = tr.io.eval_data;
  ab.io.checkpoint = ev.io.checkpoint;
  ab.eval.l_list = {tasks::default_rationale_cap(read_dataset_jsonl(tr.io.eval_data))};
  REQUIRE(cli::cmd_ablate(ab, "length") == 0);
  std::string csv = slurp(t.path / "ablate-out" / "length_sweep.csv");
  char expect[32];
  std::snprintf(expect, sizeof(expect), ",%.6f,", best_recorded);
  CHECK(csv.find(expect) != std::string::npos);
  CHECK(fs::exists(t.path / "ablate-out" / "length_sweep.dat"));
}

TEST_CASE("train with epochs=0 emits only the initial checkpoint") {
  TempDir t;
  RunConfig gen = tiny_parity_config(t.path / "data");
  REQUIRE(cli::cmd_gen_data(gen) == 0);
  RunConfig tr = tiny_parity_config(t.path / "run");
  tr.trainer.epochs = 0;
  tr.io.train_data = (t.path / "data" / "train.jsonl").string();
  tr.io.eval_data = (t.path / "data" / "eval.jsonl").string();
  REQUIRE(cli::cmd_train(tr, "sft-direct") == 0);
  CHECK(fs::exists(t.path / "run" / "checkpoints" / "epoch-0000.ckpt"));
  CHECK_FALSE(fs::exists(t.path / "run" / "checkpoints" / "epoch-0001.ckpt"));
}

TEST_CASE("missing checkpoint gives a clear error") {
  TempDir t;
  RunConfig gen = tiny_parity_config(t.path / "data");
  REQUIRE(cli::cmd_gen_data(gen) == 0);
  RunConfig ev = tiny_parity_config(t.path / "eval-out");
  ev.io.eval_data = (t.path / "data" / "eval.jsonl").string();
  ev.io.checkpoint = (t.path / "nope.ckpt").string();
  CHECK_THROWS_AS(cli::cmd_eval(ev), IoError);
}

TEST_CASE("resumed CLI training reproduces the remaining metrics bitwise") {
  TempDir t;
  RunConfig gen = tiny_parity_config(t.path / "data");
  REQUIRE(cli::cmd_gen_data(gen) == 0);
  const std::string train_path = (t.path / "data" / "train.jsonl").string();
  const std::string eval_path = (t.path / "data" / "eval.jsonl").string();

  RunConfig whole = tiny_parity_config(t.path / "whole");
  whole.trainer.epochs = 4;
  whole.io.train_data = train_path;
  whole.io.eval_data = eval_path;
  REQUIRE(cli::cmd_train(whole, "latro") == 0);

  RunConfig part = tiny_parity_config(t.path / "part");
  part.trainer.epochs = 2;
  part.io.train_data = train_path;
  part.io.eval_data = eval_path;
  REQUIRE(cli::cmd_train(part, "latro") == 0);

  RunConfig cont = tiny_parity_config(t.path / "part");
  cont.trainer.epochs = 4;
  cont.io.train_data = train_path;
  cont.io.eval_data = eval_path;
  cont.io.resume = (t.path / "part").string();
  REQUIRE(cli::cmd_train(cont, "latro") == 0);

  // the metrics file of part now holds: prefix rows + resumed rows
  CHECK(slurp(t.path / "whole" / "metrics.jsonl") == slurp(t.path / "part" / "metrics.jsonl"));
  CHECK(slurp(t.path / "whole" / "checkpoints" / "epoch-0004.ckpt") ==
        slurp(t.path / "part" / "checkpoints" / "epoch-0004.ckpt"));
}

TEST_CASE("identical config and seed reproduce every training byte") {
  TempDir t;
  RunConfig gen = tiny_parity_config(t.path / "data");
  REQUIRE(cli::cmd_gen_data(gen) == 0);
  auto run = [&](const char* name, int threads) {
    RunConfig tr = tiny_parity_config(t.path / name);
    tr.threads = threads;
    tr.io.train_data = (t.path / "data" / "train.jsonl").string();
    tr.io.eval_data = (t.path / "data" / "eval.jsonl").string();
    REQUIRE(cli::cmd_train(tr, "latro") == 0);
  };
  run("a", 1);
  run("b", 2);  // worker count must not matter either
  CHECK(slurp(t.path / "a" / "metrics.jsonl") == slurp(t.path / "b" / "metrics.jsonl"));
  CHECK(slurp(t.path / "a" / "checkpoints" / "best.ckpt") ==
        slurp(t.path / "b" / "checkpoints" / "best.ckpt"));
}

TEST_CASE("rollout dump captures every sample with recomputable rewards") {
  TempDir t;
  RunConfig gen = tiny_parity_config(t.path / "data");
  REQUIRE(cli::cmd_gen_data(gen) == 0);
  RunConfig tr = tiny_parity_config(t.path / "run");
  tr.trainer.epochs = 1;
  tr.io.train_data = (t.path / "data" / "train.jsonl").string();
  tr.io.eval_data = (t.path / "data" / "eval.jsonl").string();
  tr.io.rollout_dump = (t.path / "rollouts.jsonl").string();
  REQUIRE(cli::cmd_train(tr, "latro") == 0);

  std::ifstream in(t.path / "rollouts.jsonl");
  REQUIRE(in.good());
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    nlohmann::json rec = nlohmann::json::parse(line);
    const double recomputed = rec.at("logp_y").get<double>() -
                              tr.trainer.beta_kl * (rec.at("logp_z_cur").get<double>() -
                                                    rec.at("logp_z_ref").get<double>()) -
                              (rec.at("terminated").get<bool>() ? 0.0 : tr.trainer.gamma_trunc);
    CHECK(std::abs(recomputed - rec.at("reward").get<double>()) <= 1e-12);
    ++rows;
  }
  CHECK(rows == tr.task.train_size * static_cast<std::size_t>(tr.trainer.k));
}

TEST_CASE("verification report rows have a stable schema") {
  CheckResult c = make_check("example.check", 0.5, 1.0, true, "detail text");
  nlohmann::json j = c.to_json();
  for (const char* key : {"name", "measured", "threshold", "comparator", "pass", "detail"}) {
    CHECK(j.contains(key));
  }
  CHECK(j.at("comparator") == "<=");
  CHECK(j.at("pass") == true);
}

TEST_CASE("environment variables override output_dir and threads only") {
  TempDir t;
  setenv("LATRO_OUTPUT_DIR", (t.path / "env-out").string().c_str(), 1);
  setenv("LATRO_THREADS", "3", 1);
  RunConfig cfg = parse_run_config({{"seed", 9}, {"io", {{"output_dir", "ignored"}}}});
  unsetenv("LATRO_OUTPUT_DIR");
  unsetenv("LATRO_THREADS");
  CHECK(cfg.io.output_dir == (t.path / "env-out").string());
  CHECK(cfg.threads == 3);
  CHECK(cfg.seed == 9);
}
