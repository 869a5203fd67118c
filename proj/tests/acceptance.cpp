// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 1-8 are oracle/property checks on pinned instances;
// criteria 9-14 are end-to-end training runs on the chain-addition task.
#include <chrono>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "latro/tasks.hpp"
#include "latro/tiny_transformer.hpp"
#include "latro/trainer.hpp"
#include "latro/verify.hpp"

using namespace latro;

namespace {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string fmt(const char* pattern, ...) {
  char buf[512];
  va_list args;
  va_start(args, pattern);
  std::vsnprintf(buf, sizeof(buf), pattern, args);
  va_end(args);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// Shared training fixtures: chain-addition (n=3, digits 0-9), d=32 policy.
// ---------------------------------------------------------------------------

constexpr std::uint64_t kTaskSeed = 99;
const std::vector<std::uint64_t> kSeeds = {1, 2, 3};

tasks::GeneratedSplits chain_splits() {
  tasks::TaskSpec spec;
  spec.name = "chain-addition";
  spec.operand_count = 3;
  spec.digit_lo = 0;
  spec.digit_hi = 9;
  spec.train_size = 640;
  spec.eval_size = 160;
  spec.seed = kTaskSeed;
  return tasks::generate(spec);
}

std::unique_ptr<TinyTransformer> fresh_policy(const Vocabulary& vocab, std::uint64_t seed) {
  auto tf = std::make_unique<TinyTransformer>(vocab, 32, 48);
  Rng rng(seed_hash({seed, seed_domain::kInit, 0}));
  tf->init_parameters(rng);
  return tf;
}

TrainerConfig base_config(std::uint64_t seed, int threads) {
  TrainerConfig cfg;
  cfg.k = 16;
  cfg.beta_kl = 0.05;
  cfg.gamma_trunc = 2.0;
  cfg.temperature = 1.0;
  cfg.minibatch_size = 8;
  cfg.seed = seed;
  cfg.threads = threads;
  cfg.epochs = 0;
  return cfg;
}

struct Criterion9Run {
  double warm_acc = 0.0;
  double latro_best = 0.0;
  double sft_best = 0.0;
  std::vector<std::string> metric_rows;  // warm-start + latro rows, serialized
};

Criterion9Run run_criterion9_seed(const tasks::GeneratedSplits& splits, std::uint64_t seed,
                                  int threads) {
  Criterion9Run out;
  auto policy = fresh_policy(splits.train.vocab, seed);

  TrainSink collect;
  collect.on_metrics = [&](const nlohmann::json& row) { out.metric_rows.push_back(row.dump()); };

  // 200-step direct-SFT warm start (gentle: stronger warm starts collapse the
  // rationale distribution onto immediate termination).
  TrainerConfig warm = base_config(seed, threads);
  warm.max_steps = 200;
  warm.learning_rate = 1e-4;
  sft_train(*policy, splits.train, splits.eval, warm, SftMode::kDirect, collect);

  const std::size_t cap = tasks::default_rationale_cap(splits.train);
  out.warm_acc =
      greedy_accuracy(*policy, splits.eval, decode_limits_for(splits.eval, cap), threads).accuracy;
  auto warm_copy = policy->clone();

  TrainerConfig lt = base_config(seed, threads);
  lt.max_steps = 600;
  lt.learning_rate = 5e-3;
  TrainResult latro = latro_train(*policy, splits.train, splits.eval, lt, collect);
  out.latro_best = latro.best_accuracy;

  TrainerConfig cont = base_config(seed, threads);
  cont.max_steps = 600;
  cont.learning_rate = 5e-3;
  TrainResult sft = sft_train(*warm_copy, splits.train, splits.eval, cont, SftMode::kDirect);
  out.sft_best = sft.best_accuracy;
  return out;
}

struct AblationRuns {
  // per seed: rationale-SFT base + three LaTRO variants
  std::vector<double> nll_direct, nll_with, nll_diff_se;
  std::vector<double> trunc_drop_g2, trunc_drop_g0;
  std::vector<double> margin_at_small_l;
  std::unique_ptr<PolicyModel> seed1_large_l_model;
  std::size_t large_cap = 0, small_cap = 8;
};

AblationRuns run_ablation_suite(const tasks::GeneratedSplits& splits, int threads) {
  AblationRuns out;
  out.large_cap = tasks::default_rationale_cap(splits.train);

  for (std::uint64_t seed : kSeeds) {
    auto base = fresh_policy(splits.train.vocab, seed);
    TrainerConfig sft = base_config(seed, threads);
    sft.max_steps = 400;
    sft.learning_rate = 1e-2;
    TrainResult base_result =
        sft_train(*base, splits.train, splits.eval, sft, SftMode::kWithRationale);

    NllReport nll = nll_comparison(*base_result.best, splits.eval, RationaleSource::kGolden,
                                   out.large_cap, 1.0, seed, threads);
    out.nll_direct.push_back(nll.mean_nll_direct);
    out.nll_with.push_back(nll.mean_nll_with_rationale);
    out.nll_diff_se.push_back(nll.mean_paired_diff /
                              std::max(nll.stderr_paired_diff, 1e-300));

    auto latro_from_base = [&](std::size_t cap, double gamma, double* drop) {
      auto policy = base_result.best->clone();
      TrainerConfig lt = base_config(seed, threads);
      lt.rationale_cap = cap;
      lt.gamma_trunc = gamma;
      lt.max_steps = 300;
      lt.learning_rate = 3e-3;
      double before = measure_truncated_fraction(*policy, splits.train, lt, cap, 0, threads);
      TrainResult r = latro_train(*policy, splits.train, splits.eval, lt);
      double after = measure_truncated_fraction(*policy, splits.train, lt, cap, 0, threads);
      if (drop) *drop = before - after;
      return r;
    };

    double drop_g2 = 0.0, drop_g0 = 0.0;
    TrainResult small_g2 = latro_from_base(out.small_cap, 2.0, &drop_g2);
    latro_from_base(out.small_cap, 0.0, &drop_g0);
    TrainResult large_g2 = latro_from_base(out.large_cap, 2.0, nullptr);
    out.trunc_drop_g2.push_back(drop_g2);
    out.trunc_drop_g0.push_back(drop_g0);

    DecodeLimits at_small = decode_limits_for(splits.eval, out.small_cap);
    double small_acc = greedy_accuracy(*small_g2.best, splits.eval, at_small, threads).accuracy;
    double large_acc = greedy_accuracy(*large_g2.best, splits.eval, at_small, threads).accuracy;
    out.margin_at_small_l.push_back(small_acc - large_acc);
    if (seed == kSeeds.front()) out.seed1_large_l_model = large_g2.best->clone();
  }
  return out;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

int main(int argc, char** argv) {
  int threads = hardware_threads();
  std::string out_dir = "acceptance-out";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--threads") == 0 && i + 1 < argc) {
      threads = std::atoi(argv[++i]);
    } else if (std::strcmp(argv[i], "--out") == 0 && i + 1 < argc) {
      out_dir = argv[++i];
    } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      for (const char* p = argv[++i]; *p;) {
        only.insert(std::atoi(p));
        while (*p && *p != ',') ++p;
        if (*p == ',') ++p;
      }
    } else {
      std::fprintf(stderr, "usage: acceptance [--threads N] [--out DIR] [--only 1,2,...]\n");
      return 2;
    }
  }

  std::vector<CriterionResult> results;
  auto wants = [&](int id) { return only.empty() || only.count(id) > 0; };
  auto record = [&](int id, const std::string& name, bool pass, const std::string& detail,
                    double t0) {
    CriterionResult r{id, name, pass, detail, now_seconds() - t0};
    std::printf("criterion-%02d %s  %s  [%s]  (%.1fs)\n", id, pass ? "PASS" : "FAIL", name.c_str(),
                detail.c_str(), r.seconds);
    std::fflush(stdout);
    results.push_back(std::move(r));
  };

  // --- 1. RLOO gradient unbiasedness ---------------------------------------
  if (wants(1)) {
    double t0 = now_seconds();
    UnbiasednessReport rep = unbiasedness_report(EstimatorKind::kRloo, 200000, threads);
    record(1, "rloo gradient unbiasedness",
           rep.within_se.pass && rep.cosine.pass,
           fmt("max |z|=%.3f (<=4), cosine=%.6f (>0.999), 200000 replicates",
               rep.within_se.measured, rep.cosine.measured),
           t0);
  }

  // --- 2. cross-oracle agreement -------------------------------------------
  if (wants(2)) {
    double t0 = now_seconds();
    CheckResult c = check_cross_oracle_agreement(threads);
    record(2, "exact vs finite-difference oracle", c.pass,
           fmt("relative L2 = %.3g (< 1e-6), 5 instances", c.measured), t0);
  }

  // --- 3. variance reduction ------------------------------------------------
  if (wants(3)) {
    double t0 = now_seconds();
    UnbiasednessReport rloo = unbiasedness_report(EstimatorKind::kRloo, 200000, threads);
    UnbiasednessReport reinf = unbiasedness_report(EstimatorKind::kNaiveReinforce, 200000, threads);
    record(3, "rloo variance <= naive reinforce", rloo.trace <= reinf.trace,
           fmt("trace(RLOO)=%.4f, trace(REINFORCE)=%.4f, K=4, 200000 replicates each",
               rloo.trace, reinf.trace),
           t0);
  }

  // --- 4. RLOO algebra -------------------------------------------------------
  if (wants(4)) {
    double t0 = now_seconds();
    CheckResult c = check_rloo_algebra(threads);
    record(4, "advantage zero-sum and shift invariance", c.pass,
           fmt("worst scaled violation = %.3g (<=1), 10000 reward vectors, K in 2..16",
               c.measured),
           t0);
  }

  // --- 5. ELBO inequality ----------------------------------------------------
  if (wants(5)) {
    double t0 = now_seconds();
    CheckResult c = check_elbo(threads);
    record(5, "elbo <= log marginal, gap = posterior KL", c.pass,
           fmt("worst violation/gap error = %.3g (<=1e-10), 100 instances", c.measured), t0);
  }

  // --- 6. score-function identity --------------------------------------------
  if (wants(6)) {
    double t0 = now_seconds();
    CheckResult c = check_score_identity(threads);
    record(6, "enumerated E[grad log pi(z|x)] = 0", c.pass,
           fmt("max coordinate = %.3g (<=1e-9), 20 instances", c.measured), t0);
  }

  // --- 7. majority-vote convergence ----------------------------------------------
  if (wants(7)) {
    double t0 = now_seconds();
    std::vector<VoteFrequencyRow> rows;
    CheckResult c = check_vote_frequency(threads, &rows);
    std::string detail = "mean |F-p_M| by K:";
    for (const VoteFrequencyRow& row : rows) {
      detail += fmt(" %ld:%.4f", row.draws, row.mean_abs_deviation);
    }
    record(7, "majority-vote frequency converges to p_M", c.pass,
           detail + " (bound at K=4096, 50 reseeds)", t0);
  }

  // --- 8. transformer gradient check ------------------------------------------
  if (wants(8)) {
    double t0 = now_seconds();
    CheckResult c = check_transformer_grad_fd(threads);
    record(8, "transformer grad vs finite differences (d=16, V=14)", c.pass,
           fmt("max relative error = %.3g (<1e-4), 5 draws", c.measured), t0);
  }

  tasks::GeneratedSplits splits = chain_splits();

  // --- 9. end-to-end LaTRO gain ------------------------------------------------
  if (wants(9)) {
    double t0 = now_seconds();
    std::vector<double> latro_gains, sft_gains;
    for (std::uint64_t seed : kSeeds) {
      Criterion9Run run = run_criterion9_seed(splits, seed, threads);
      latro_gains.push_back(run.latro_best - run.warm_acc);
      sft_gains.push_back(run.sft_best - run.warm_acc);
    }
    const double lg = mean(latro_gains), sg = mean(sft_gains);
    record(9, "LaTRO gain over warm start, 3 seeds", lg >= 0.10 && lg > sg,
           fmt("latro gain = %+.3f (>=0.10), sft-continued gain = %+.3f (< latro)", lg, sg),
           t0);
  }

  // --- 10-12. rationale-SFT base, shaping and length ablation -------------------
  AblationRuns ablation;
  if (wants(10) || wants(11) || wants(12) || wants(13)) {
    double t0 = now_seconds();
    ablation = run_ablation_suite(splits, threads);
    if (wants(10)) {
      bool pass = true;
      for (double z : ablation.nll_diff_se) pass = pass && z >= 4.0;
      record(10, "rationale NLL < direct NLL after rationale-SFT", pass,
             fmt("mean NLL %.2f -> %.2f with z*, min paired significance %.1f SE (>=4)",
                 mean(ablation.nll_direct), mean(ablation.nll_with),
                 *std::min_element(ablation.nll_diff_se.begin(), ablation.nll_diff_se.end())),
             t0);
    }
    if (wants(11)) {
      const double g2 = mean(ablation.trunc_drop_g2), g0 = mean(ablation.trunc_drop_g0);
      record(11, "truncation shaping under gamma", g2 > 0.0 && g0 < g2,
             fmt("truncated-fraction decrease: gamma=2 %.3f (>0), gamma=0 %.3f (strictly smaller)",
                 g2, g0),
             t0);
    }
    if (wants(12)) {
      const double margin = mean(ablation.margin_at_small_l);
      record(12, "small-L-trained model retains accuracy at small L", margin >= 0.05,
             fmt("mean margin at inference L=%zu: %+.3f (>=0.05)", ablation.small_cap, margin),
             t0);
    }
  }

  // --- 13. self-consistency curve ------------------------------------------------
  if (wants(13)) {
    double t0 = now_seconds();
    const PolicyModel& model = *ablation.seed1_large_l_model;
    DecodeLimits limits = decode_limits_for(splits.eval, ablation.large_cap);
    std::map<int, double> curve;
    for (int k : {1, 2, 4, 8, 16, 32}) {
      curve[k] = maj_at_k(model, splits.eval, k, limits, 1.0, 4242, threads).accuracy;
    }
    std::string detail = "maj@k:";
    for (const auto& [k, a] : curve) detail += fmt(" %d:%.3f", k, a);
    record(13, "self-consistency does not hurt", curve[8] >= curve[1] - 0.02, detail, t0);
  }

  // --- 14. determinism across thread counts ----------------------------------------
  if (wants(14)) {
    double t0 = now_seconds();
    Criterion9Run one = run_criterion9_seed(splits, kSeeds.front(), 1);
    Criterion9Run two = run_criterion9_seed(splits, kSeeds.front(), 2);
    bool same = one.metric_rows == two.metric_rows;
    record(14, "bitwise-identical metrics for any thread count", same,
           fmt("%zu metric rows, threads 1 vs 2 %s", one.metric_rows.size(),
               same ? "identical" : "DIFFER"),
           t0);
  }

  int failed = 0;
  nlohmann::json report = nlohmann::json::array();
  for (const CriterionResult& r : results) {
    if (!r.pass) ++failed;
    report.push_back({{"criterion", r.id},
                      {"name", r.name},
                      {"pass", r.pass},
                      {"detail", r.detail},
                      {"seconds", r.seconds}});
  }
  std::filesystem::create_directories(out_dir);
  std::ofstream out(std::filesystem::path(out_dir) / "acceptance-report.json");
  out << nlohmann::json({{"criteria", report}, {"failed", failed}}).dump(2) << "\n";

  std::printf("%zu/%zu criteria passed\n", results.size() - failed, results.size());
  return failed == 0 ? 0 : 1;
}
