#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "latro/checkpoint.hpp"
#include "latro/run_config.hpp"
#include "latro/verify.hpp"

namespace latro {
namespace cli {

namespace fs = std::filesystem;

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_resolved_config(const RunConfig& cfg, const fs::path& dir) {
  write_text(dir / "resolved-config.json", resolved_config_json(cfg).dump(2) + "\n");
}

// Timestamps live only here; every other output byte is seed-determined.
class RunLog {
 public:
  explicit RunLog(const fs::path& path) : out_(path, std::ios::binary | std::ios::app) {}
  void line(const std::string& msg) {
    if (!out_) return;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    out_ << ms << " " << msg << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline std::unique_ptr<PolicyModel> build_model(const RunConfig& cfg, const Vocabulary& vocab) {
  cfg.model.validate();
  if (cfg.model.model_class == "tabular") {
    auto p = std::make_unique<TabularPolicy>(vocab, cfg.model.context_order);
    return p;  // tabular logits start at 0 (uniform policy)
  }
  auto p = std::make_unique<TinyTransformer>(vocab, cfg.model.embed_dim, cfg.model.max_positions);
  Rng rng(seed_hash({cfg.seed, seed_domain::kInit, 0}));
  p->init_parameters(rng, cfg.model.init_stddev);
  return p;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline int cmd_gen_data(RunConfig cfg) {
  cfg.task.seed = cfg.seed;
  tasks::GeneratedSplits splits = tasks::generate(cfg.task);
  const fs::path dir = cfg.io.output_dir;
  ensure_dir(dir);
  write_dataset_jsonl(splits.train, (dir / "train.jsonl").string());
  write_dataset_jsonl(splits.eval, (dir / "eval.jsonl").string());

  auto stats = [](const Dataset& ds) {
    std::size_t qmin = SIZE_MAX, qmax = 0, zmax = 0;
    double qsum = 0.0, zsum = 0.0;
    for (const Example& ex : ds.examples) {
      qmin = std::min(qmin, ex.query.size());
      qmax = std::max(qmax, ex.query.size());
      qsum += static_cast<double>(ex.query.size());
      if (ex.golden_rationale) {
        zmax = std::max(zmax, ex.golden_rationale->size());
        zsum += static_cast<double>(ex.golden_rationale->size());
      }
    }
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "  examples: %zu\n  query length: min %zu mean %.1f max %zu\n"
                  "  golden rationale: mean %.1f max %zu\n",
                  ds.examples.size(), qmin, qsum / ds.examples.size(), qmax,
                  zsum / ds.examples.size(), zmax);
    return std::string(buf);
  };
  std::string summary = "task: " + cfg.task.name + "\nseed: " + std::to_string(cfg.seed) +
                        "\nvocabulary: " + std::to_string(splits.train.vocab.size()) +
                        " tokens\n" + "default rationale cap (1.5x golden max): " +
                        std::to_string(tasks::default_rationale_cap(splits.train)) + "\n" +
                        "train:\n" + stats(splits.train) + "eval:\n" + stats(splits.eval);
  write_text(dir / "summary.txt", summary);
  write_resolved_config(cfg, dir);
  std::printf("wrote %s (%zu train, %zu eval)\n", dir.string().c_str(),
              splits.train.examples.size(), splits.eval.examples.size());
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutputs {
  fs::path dir;
  std::ofstream metrics;
  std::unique_ptr<RunLog> log;
};

inline TrainOutputs open_train_outputs(const RunConfig& cfg, bool append) {
  TrainOutputs out;
  out.dir = cfg.io.output_dir;
  ensure_dir(out.dir);
  ensure_dir(out.dir / "checkpoints");
  auto mode = std::ios::binary | (append ? std::ios::app : std::ios::out);
  out.metrics.open(out.dir / "metrics.jsonl", mode);
  if (!out.metrics) throw IoError("cannot open metrics.jsonl in " + out.dir.string());
  out.log = std::make_unique<RunLog>(out.dir / "run.log");
  return out;
}

struct ResumeState {
  std::string phase;
  ResumePoint point;
  std::unique_ptr<PolicyModel> policy;
  std::unique_ptr<PolicyModel> best;
  std::unique_ptr<PolicyModel> reference;
};

inline void save_train_state(const fs::path& dir, const std::string& phase,
                             const PolicyModel& policy, const PolicyModel* best,
                             const PolicyModel* reference, const TrainResult& partial, int epoch,
                             long step, int best_epoch, double best_accuracy) {
  const fs::path sdir = dir / "state";
  ensure_dir(sdir);
  save_checkpoint(policy, (sdir / "params.ckpt").string());
  if (best) save_checkpoint(*best, (sdir / "best.ckpt").string());
  if (reference) save_checkpoint(*reference, (sdir / "reference.ckpt").string());
  if (!partial.adam_m.empty()) {
    save_vector_blob(partial.adam_m, policy.params().layout(), "adam_m",
                     (sdir / "adam_m.blob").string());
    save_vector_blob(partial.adam_v, policy.params().layout(), "adam_v",
                     (sdir / "adam_v.blob").string());
  }
  nlohmann::json st;
  st["phase"] = phase;
  st["epoch"] = epoch;
  st["step"] = step;
  st["best_epoch"] = best_epoch;
  st["best_accuracy"] = best_accuracy;
  write_text(sdir / "state.json", st.dump(2) + "\n");
}

inline ResumeState load_train_state(const fs::path& run_dir) {
  const fs::path sdir = run_dir / "state";
  std::ifstream in(sdir / "state.json");
  if (!in) throw IoError("no resumable state in " + run_dir.string());
  nlohmann::json st;
  in >> st;
  ResumeState rs;
  rs.phase = st.at("phase").get<std::string>();
  rs.point.epoch = st.at("epoch").get<int>();
  rs.point.step = st.at("step").get<long>();
  rs.point.best_epoch = st.at("best_epoch").get<int>();
  rs.point.best_accuracy = st.at("best_accuracy").get<double>();
  rs.policy = load_checkpoint((sdir / "params.ckpt").string());
  if (fs::exists(sdir / "best.ckpt")) rs.best = load_checkpoint((sdir / "best.ckpt").string());
  if (fs::exists(sdir / "reference.ckpt")) {
    rs.reference = load_checkpoint((sdir / "reference.ckpt").string());
    rs.point.reference = rs.reference.get();
  }
  if (fs::exists(sdir / "adam_m.blob")) {
    rs.point.adam_m =
        load_vector_blob(rs.policy->params().layout(), "adam_m", (sdir / "adam_m.blob").string());
    rs.point.adam_v =
        load_vector_blob(rs.policy->params().layout(), "adam_v", (sdir / "adam_v.blob").string());
  }
  return rs;
}

inline int cmd_train(RunConfig cfg, const std::string& algorithm) {
  if (cfg.io.train_data.empty() || cfg.io.eval_data.empty()) {
    throw ConfigError("train requires io.train_data and io.eval_data");
  }
  Dataset train = read_dataset_jsonl(cfg.io.train_data);
  Dataset eval_set = read_dataset_jsonl(cfg.io.eval_data);

  TrainerConfig tcfg = cfg.trainer;
  tcfg.seed = cfg.seed;
  tcfg.threads = cfg.threads;

  const bool resuming = !cfg.io.resume.empty();
  ResumeState resume_state;
  std::unique_ptr<PolicyModel> policy;
  if (resuming) {
    resume_state = load_train_state(cfg.io.resume);
    require(resume_state.phase == algorithm,
            "resume state is for algorithm '" + resume_state.phase + "', not '" + algorithm + "'");
    policy = std::move(resume_state.policy);
  } else {
    policy = build_model(cfg, train.vocab);
  }

  TrainOutputs outputs = open_train_outputs(cfg, resuming);
  write_resolved_config(cfg, outputs.dir);
  outputs.log->line("train start: algorithm=" + algorithm + " seed=" + std::to_string(cfg.seed) +
                    " threads=" + std::to_string(cfg.threads));

  auto checkpoint_writer = [&](int epoch, const PolicyModel& p, bool is_best) {
    char name[64];
    std::snprintf(name, sizeof(name), "epoch-%04d.ckpt", epoch);
    save_checkpoint(p, (outputs.dir / "checkpoints" / name).string());
    if (is_best) save_checkpoint(p, (outputs.dir / "checkpoints" / "best.ckpt").string());
    outputs.log->line("checkpoint epoch " + std::to_string(epoch) +
                      std::string(is_best ? " (best)" : ""));
  };

  TrainResult result;
  std::unique_ptr<PolicyModel> reference_copy;
  if (algorithm == "latro") {
    if (cfg.warm_start_steps > 0 && !resuming) {
      TrainerConfig wcfg = tcfg;
      wcfg.max_steps = cfg.warm_start_steps;
      wcfg.epochs = 0;
      if (cfg.warm_start_learning_rate > 0.0) wcfg.learning_rate = cfg.warm_start_learning_rate;
      TrainSink wsink;
      wsink.on_metrics = [&](const nlohmann::json& row) {
        nlohmann::json tagged = row;
        tagged["phase"] = "warm-start";
        outputs.metrics << tagged.dump() << "\n";
      };
      wsink.on_log = [&](const std::string& m) { outputs.log->line(m); };
      sft_train(*policy, train, eval_set, wcfg, SftMode::kDirect, wsink);
      outputs.log->line("warm start complete: " + std::to_string(cfg.warm_start_steps) + " steps");
    }
    TrainSink sink;
    sink.on_metrics = [&](const nlohmann::json& row) {
      nlohmann::json tagged = row;
      tagged["phase"] = "latro";
      outputs.metrics << tagged.dump() << "\n";
    };
    sink.on_checkpoint = checkpoint_writer;
    sink.on_log = [&](const std::string& m) { outputs.log->line(m); };
    if (!cfg.io.rollout_dump.empty()) {
      const std::string dump_path = cfg.io.rollout_dump;
      std::ofstream(dump_path, std::ios::trunc);  // fresh file per run
      sink.on_rollouts = [dump_path](const std::vector<RolloutBatch>& batches,
                                     const std::vector<std::size_t>& indices) {
        dump_rollouts_jsonl(batches, indices, dump_path);
      };
    }
    // the parameters at this point are exactly what latro_train freezes as pi_0
    if (resuming) {
      require(resume_state.reference != nullptr,
              "resume state has no reference policy snapshot");
      reference_copy = resume_state.reference->clone();
    } else {
      reference_copy = policy->clone();
    }
    result = latro_train(*policy, train, eval_set, tcfg, sink,
                         resuming ? &resume_state.point : nullptr);
  } else if (algorithm == "sft-direct" || algorithm == "sft-rationale") {
    TrainSink sink;
    sink.on_metrics = [&](const nlohmann::json& row) {
      nlohmann::json tagged = row;
      tagged["phase"] = algorithm;
      outputs.metrics << tagged.dump() << "\n";
    };
    sink.on_checkpoint = checkpoint_writer;
    sink.on_log = [&](const std::string& m) { outputs.log->line(m); };
    result = sft_train(*policy, train, eval_set, tcfg,
                       algorithm == "sft-direct" ? SftMode::kDirect : SftMode::kWithRationale,
                       sink, resuming ? &resume_state.point : nullptr);
  } else {
    throw ConfigError("unknown algorithm '" + algorithm + "' (latro | sft-direct | sft-rationale)");
  }

  save_train_state(outputs.dir, algorithm, *policy, result.best.get(), reference_copy.get(),
                   result, result.epochs, result.steps, result.best_epoch, result.best_accuracy);
  outputs.log->line("train done: best_epoch=" + std::to_string(result.best_epoch) +
                    " best_accuracy=" + std::to_string(result.best_accuracy));
  std::printf("best epoch %d accuracy %.4f (initial %.4f, final %.4f)\n", result.best_epoch,
              result.best_accuracy, result.initial_accuracy, result.final_accuracy);
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

inline int cmd_eval(RunConfig cfg) {
  if (cfg.io.checkpoint.empty() || cfg.io.eval_data.empty()) {
    throw ConfigError("eval requires io.checkpoint and io.eval_data");
  }
  std::unique_ptr<PolicyModel> policy = load_checkpoint(cfg.io.checkpoint);
  Dataset eval_set = read_dataset_jsonl(cfg.io.eval_data);
  require(eval_set.vocab == policy->vocab(), "checkpoint and dataset vocabularies differ");

  const std::size_t cap = cfg.trainer.rationale_cap > 0 ? cfg.trainer.rationale_cap
                                                        : tasks::default_rationale_cap(eval_set);
  const DecodeLimits limits = decode_limits_for(eval_set, cap);
  const fs::path dir = cfg.io.output_dir;
  ensure_dir(dir);

  EvalReport report;
  report.task = eval_set.task_name;
  report.checkpoint_id = cfg.io.checkpoint;
  report.greedy_acc = greedy_accuracy(*policy, eval_set, limits, cfg.threads).accuracy;

  for (int k : cfg.eval.k_list) {
    report.maj_accuracy.emplace_back(
        k, maj_at_k(*policy, eval_set, k, limits, cfg.eval.temperature, cfg.seed, cfg.threads)
               .accuracy);
  }
  std::sort(report.maj_accuracy.begin(), report.maj_accuracy.end());

  bool has_golden = true;
  for (const Example& ex : eval_set.examples) has_golden = has_golden && ex.golden_rationale.has_value();
  NllReport nll = nll_comparison(*policy, eval_set,
                                 has_golden ? RationaleSource::kGolden : RationaleSource::kSampled,
                                 cap, cfg.eval.temperature, cfg.seed, cfg.threads);
  report.mean_nll_direct = nll.mean_nll_direct;
  report.mean_nll_with_rationale = nll.mean_nll_with_rationale;

  // sampled-rationale shape statistics
  {
    const std::size_t n = eval_set.examples.size();
    std::vector<double> lens(n, 0.0), trunc(n, 0.0);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
      Rng rng(seed_hash({cfg.seed, seed_domain::kEval, 0xABCDEF, i}));
      Sequence raw = sample_sequence(*policy, eval_set.examples[i].query, cap,
                                     cfg.eval.temperature, rng,
                                     {policy->vocab().eos(), policy->vocab().ans()});
      GeneratedRationale gen = cut_rationale(policy->vocab(), std::move(raw));
      lens[i] = static_cast<double>(gen.rationale.size());
      trunc[i] = gen.terminated ? 0.0 : 1.0;
    });
    for (std::size_t i = 0; i < n; ++i) {
      report.mean_rationale_length += lens[i] / static_cast<double>(n);
      report.truncated_fraction += trunc[i] / static_cast<double>(n);
    }
  }

  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  {
    std::string csv = "k,accuracy,half_width,N\n";
    for (const auto& [k, a] : report.maj_accuracy) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%zu\n", k, a,
                    std::sqrt(a * (1.0 - a) / eval_set.examples.size()),
                    eval_set.examples.size());
      csv += buf;
    }
    write_text(dir / "maj_at_k.csv", csv);
  }
  write_resolved_config(cfg, dir);
  std::printf("greedy accuracy %.4f (report in %s)\n", report.greedy_acc, dir.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

inline int cmd_verify(RunConfig cfg) {
  const fs::path dir = cfg.io.output_dir;
  ensure_dir(dir);
  VerificationArtifacts artifacts;
  std::vector<CheckResult> checks = run_verification(cfg.threads, &artifacts);
  nlohmann::json report;
  report["checks"] = nlohmann::json::array();
  int failed = 0;
  for (const CheckResult& c : checks) {
    report["checks"].push_back(c.to_json());
    std::printf("%-55s %s  measured=%.6g %s %.6g\n", c.name.c_str(), c.pass ? "PASS" : "FAIL",
                c.measured, c.upper_bound ? "<=" : ">=", c.threshold);
    if (!c.pass) ++failed;
  }
  report["all_pass"] = failed == 0;
  report["failed"] = failed;
  write_text(dir / "verification-report.json", report.dump(2) + "\n");
  write_text(dir / "variance-harness.json", artifacts.harness_json().dump(2) + "\n");
  write_resolved_config(cfg, dir);
  std::printf("%d/%zu checks passed\n", static_cast<int>(checks.size()) - failed, checks.size());
  return failed == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

inline int cmd_ablate(RunConfig cfg, const std::string& sweep) {
  if (cfg.io.eval_data.empty()) throw ConfigError("ablate requires io.eval_data");
  Dataset eval_set = read_dataset_jsonl(cfg.io.eval_data);
  const fs::path dir = cfg.io.output_dir;
  ensure_dir(dir);

  auto write_sweep = [&](const std::string& stem, const std::string& var,
                         const std::vector<SweepPoint>& points) {
    std::string csv = "checkpoint," + var + ",accuracy,half_width,N\n";
    std::string dat;
    for (const SweepPoint& p : points) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%s,%g,%.6f,%.6f,%zu\n", p.checkpoint.c_str(), p.sweep_value,
                    p.accuracy, p.half_width, p.n);
      csv += buf;
      std::snprintf(buf, sizeof(buf), "%g %.6f %.6f\n", p.sweep_value, p.accuracy, p.half_width);
      dat += buf;
    }
    write_text(dir / (stem + ".csv"), csv);
    write_text(dir / (stem + ".dat"), dat);
  };

  if (sweep == "length") {
    std::vector<std::string> paths = cfg.io.checkpoints;
    if (paths.empty() && !cfg.io.checkpoint.empty()) paths.push_back(cfg.io.checkpoint);
    require(!paths.empty(), "length sweep requires io.checkpoint or io.checkpoints");
    require(!cfg.eval.l_list.empty(), "length sweep requires eval.l_list");
    std::vector<std::unique_ptr<PolicyModel>> models;
    std::vector<std::pair<std::string, const PolicyModel*>> named;
    for (const std::string& p : paths) {
      models.push_back(load_checkpoint(p));
      require(models.back()->vocab() == eval_set.vocab,
              "checkpoint and dataset vocabularies differ: " + p);
      named.emplace_back(p, models.back().get());
    }
    write_sweep("length_sweep", "L",
                ablate_length(named, eval_set, cfg.eval.l_list, cfg.threads));
  } else if (sweep == "majk") {
    require(!cfg.io.checkpoint.empty(), "majk sweep requires io.checkpoint");
    std::unique_ptr<PolicyModel> policy = load_checkpoint(cfg.io.checkpoint);
    require(policy->vocab() == eval_set.vocab, "checkpoint and dataset vocabularies differ");
    const std::size_t cap = cfg.trainer.rationale_cap > 0
                                ? cfg.trainer.rationale_cap
                                : tasks::default_rationale_cap(eval_set);
    std::vector<SweepPoint> points = ablate_majk(*policy, eval_set, cfg.eval.k_list, cap,
                                                 cfg.eval.temperature, cfg.seed, cfg.threads);
    for (SweepPoint& p : points) p.checkpoint = cfg.io.checkpoint;
    write_sweep("majk_sweep", "k", points);
  } else {
    throw ConfigError("unknown sweep '" + sweep + "' (length | majk)");
  }
  write_resolved_config(cfg, dir);
  std::printf("wrote %s sweep to %s\n", sweep.c_str(), dir.string().c_str());
  return 0;
}

}  // namespace cli
}  // namespace latro
