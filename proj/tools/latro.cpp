#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "latro/cli.hpp"

namespace {

// Exit-code contract: 0 success, 1 verification/acceptance failure,
// 2 usage/config error, 3 IO error.
int dispatch(const std::string& command, const std::string& arg, latro::RunConfig cfg) {
  if (command == "gen-data") return latro::cli::cmd_gen_data(std::move(cfg));
  if (command == "train") return latro::cli::cmd_train(std::move(cfg), arg);
  if (command == "eval") return latro::cli::cmd_eval(std::move(cfg));
  if (command == "verify") return latro::cli::cmd_verify(std::move(cfg));
  if (command == "ablate") return latro::cli::cmd_ablate(std::move(cfg), arg);
  throw latro::ConfigError("unknown command " + command);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-rationale policy optimization at desk scale"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::int64_t seed = -1;
  int threads = 0;
  std::string output;

  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "override config seed");
  app.add_option("--threads", threads, "override worker count");
  app.add_option("--output", output, "override output directory");

  std::string algorithm = "latro";
  std::string sweep = "length";
  CLI::App* gen = app.add_subcommand("gen-data", "generate task datasets (train/eval JSONL)");
  CLI::App* train = app.add_subcommand("train", "train a policy");
  train->add_option("--algorithm", algorithm, "latro | sft-direct | sft-rationale");
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  CLI::App* verify = app.add_subcommand("verify", "run the oracle and property suite");
  CLI::App* ablate = app.add_subcommand("ablate", "run an ablation sweep");
  ablate->add_option("--sweep", sweep, "length | majk");
  (void)gen;
  (void)ev;
  (void)verify;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    latro::RunConfig cfg =
        config_path.empty() ? latro::parse_run_config(nlohmann::json::object())
                            : latro::load_run_config(config_path);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (threads > 0) cfg.threads = threads;
    if (!output.empty()) cfg.io.output_dir = output;

    std::string command = app.get_subcommands().front()->get_name();
    std::string arg = command == "train" ? algorithm : sweep;
    return dispatch(command, arg, std::move(cfg));
  } catch (const latro::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const latro::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
