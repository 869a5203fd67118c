#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latro/estimator.hpp"
#include "latro/eval.hpp"
#include "latro/optimizer.hpp"
#include "latro/tabular_policy.hpp"
#include "latro/tiny_transformer.hpp"

namespace latro {

struct CheckResult {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool upper_bound = true;  // pass iff measured <= threshold (else >=)
  bool pass = false;
  std::string detail;

  nlohmann::json to_json() const {
    return {{"name", name},        {"measured", measured}, {"threshold", threshold},
            {"comparator", upper_bound ? "<=" : ">="},     {"pass", pass},
            {"detail", detail}};
  }
};

inline CheckResult make_check(std::string name, double measured, double threshold,
                              bool upper_bound = true, std::string detail = "") {
  CheckResult c{std::move(name), measured, threshold, upper_bound, false, std::move(detail)};
  c.pass = upper_bound ? (measured <= threshold) : (measured >= threshold);
  return c;
}

// ---------------------------------------------------------------------------
// Pinned instances. Every statistical check runs against one of these.
// ---------------------------------------------------------------------------

struct VerificationInstance {
  Vocabulary vocab;
  std::unique_ptr<TabularPolicy> policy;
  std::unique_ptr<TabularPolicy> reference;
  Example example;
  RolloutConfig rollout;
};

// V=5 (BOS, EOS, ANS + two content tokens), m=1, L=3, K=4, beta=0.05, gamma=2,
// parameters from seed 42 (reference from 4242).
inline VerificationInstance standard_instance() {
  VerificationInstance inst{Vocabulary(0, 1, 2, {"^", "$", "@", "a", "b"}), nullptr, nullptr,
                            {}, {}};
  inst.policy = std::make_unique<TabularPolicy>(inst.vocab, 1);
  inst.reference = std::make_unique<TabularPolicy>(inst.vocab, 1);
  Rng r_theta(42), r_ref(4242);
  for (std::size_t i = 0; i < inst.policy->params().size(); ++i) {
    inst.policy->params()[i] = 0.5 * r_theta.next_gaussian();
  }
  for (std::size_t i = 0; i < inst.reference->params().size(); ++i) {
    inst.reference->params()[i] = 0.5 * r_ref.next_gaussian();
  }
  inst.example.query = {0, 3};
  inst.example.answer = {4, 1};
  inst.rollout = {4, 3, 1.0, 0.05, 2.0};
  return inst;
}

inline std::unique_ptr<TabularPolicy> random_tabular(const Vocabulary& vocab, int order,
                                                     std::uint64_t seed, double scale = 0.5) {
  auto p = std::make_unique<TabularPolicy>(vocab, order);
  Rng rng(seed);
  for (std::size_t i = 0; i < p->params().size(); ++i) p->params()[i] = scale * rng.next_gaussian();
  return p;
}

// Tabular m=1 policy whose first-answer-token row is hand-set so that
// p_M([a]) is exactly 0.6 regardless of the sampled rationale.
inline VerificationInstance majority_vote_instance() {
  VerificationInstance inst{Vocabulary(0, 1, 2, {"^", "$", "@", "a", "b"}), nullptr, nullptr,
                            {}, {}};
  inst.policy = random_tabular(inst.vocab, 1, 777, 0.6);
  inst.reference.reset(static_cast<TabularPolicy*>(inst.policy->clone().release()));
  const double probs[5] = {0.05, 0.05, 0.10, 0.60, 0.20};  // BOS EOS ANS a b
  double* row = inst.policy->logits_row({inst.vocab.ans()});
  for (int t = 0; t < 5; ++t) row[t] = std::log(probs[t]);
  inst.example.query = {0, 3};
  inst.example.answer = {3, 1};  // "a" is the correct answer
  inst.rollout = {4, 2, 1.0, 0.0, 0.0};
  return inst;
}

// m=2 instance where the answer distribution genuinely depends on the
// rationale, for the vote-frequency convergence checks.
inline VerificationInstance vote_frequency_instance() {
  VerificationInstance inst{Vocabulary(0, 1, 2, {"^", "$", "@", "a", "b"}), nullptr, nullptr,
                            {}, {}};
  inst.policy = random_tabular(inst.vocab, 2, 4243, 0.7);
  inst.reference.reset(static_cast<TabularPolicy*>(inst.policy->clone().release()));
  inst.example.query = {0, 4};
  inst.example.answer = {3, 1};
  inst.rollout = {4, 2, 1.0, 0.0, 0.0};
  return inst;
}

// ---------------------------------------------------------------------------
// Individual checks. Each returns a CheckResult with the worst observed value.
// ---------------------------------------------------------------------------

namespace verify_detail {

inline double gradcheck_rel_error(const PolicyModel& policy, const std::vector<double>& analytic,
                                  const std::function<double()>& value, ParameterVector& theta,
                                  double step = 1e-5) {
  (void)policy;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + step;
    const double up = value();
    theta[i] = orig - step;
    const double down = value();
    theta[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    // |a - fd| <= atol + rtol*max(|a|,|fd|) with atol=1e-7, rtol=1e-4,
    // reported as a relative error against the floor scale atol/rtol.
    const double rel =
        std::abs(analytic[i] - fd) / std::max({1e-3, std::abs(analytic[i]), std::abs(fd)});
    worst = std::max(worst, rel);
  }
  return worst;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return num / std::sqrt(na * nb);
}

inline double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

}  // namespace verify_detail

// --- policy checks --------------------------------------------------------

inline CheckResult check_normalization(int threads) {
  (void)threads;
  double worst = 0.0;
  Vocabulary vocab(0, 1, 2, {"^", "$", "@", "a", "b"});
  for (int order = 1; order <= 2; ++order) {
    auto tab = random_tabular(vocab, order, 100 + static_cast<std::uint64_t>(order));
    for (const Sequence& prefix :
         std::vector<Sequence>{{0}, {0, 3}, {0, 3, 4}, {0, 4, 4, 3}}) {
      double sum = 0.0;
      for (double p : softmax(tab->next_logits(prefix))) sum += p;
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  Vocabulary vbig(0, 1, 2, {"^", "$", "@", "a", "b", "c", "d", "e"});
  TinyTransformer tf(vbig, 12, 16);
  Rng rng(11);
  tf.init_parameters(rng);
  for (const Sequence& prefix : std::vector<Sequence>{{0}, {0, 5, 3}, {0, 7, 6, 5, 4}}) {
    double sum = 0.0;
    for (double p : softmax(tf.next_logits(prefix))) sum += p;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return make_check("policy.normalization", worst, 1e-12);
}

inline CheckResult check_chain_rule(int threads) {
  (void)threads;
  double worst = 0.0;
  Vocabulary vocab(0, 1, 2, {"^", "$", "@", "a", "b", "c"});
  auto tab = random_tabular(vocab, 2, 21);
  TinyTransformer tf(vocab, 10, 20);
  Rng rng(22);
  tf.init_parameters(rng);
  const Sequence x = {0, 3}, z = {4, 5, 3}, y = {5, 1};
  for (const PolicyModel* p : std::vector<const PolicyModel*>{tab.get(), &tf}) {
    double whole = logprob(*p, x, concat(z, y)).total;
    double split = logprob(*p, x, z).total + logprob(*p, concat(x, z), y).total;
    worst = std::max(worst, std::abs(whole - split));
  }
  return make_check("policy.chain_rule_factorization", worst, 1e-10);
}

inline CheckResult check_tabular_grad_fd(int threads) {
  (void)threads;
  Vocabulary vocab(0, 1, 2, {"^", "$", "@", "a", "b"});
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 3; ++draw) {
    auto tab = random_tabular(vocab, 1, 300 + draw);
    const Sequence prefix = {0, 3}, cont = {4, 3, 1};
    GradientAccumulator acc(tab->params().layout());
    tab->grad_logprob(prefix, cont, acc, 1.0);
    auto value = [&] { return logprob(*tab, prefix, cont).total; };
    worst = std::max(worst, verify_detail::gradcheck_rel_error(*tab, acc.values(), value,
                                                               tab->params()));
  }
  return make_check("policy.tabular_grad_vs_fd", worst, 1e-4);
}

// Criterion 8 instance: d=16, V=14, 5 random parameter draws.
inline CheckResult check_transformer_grad_fd(int threads) {
  (void)threads;
  std::vector<std::string> glyphs = {"^", "$", "@"};
  for (int i = 0; i < 11; ++i) glyphs.push_back(std::string(1, static_cast<char>('a' + i)));
  Vocabulary vocab(0, 1, 2, glyphs);
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    TinyTransformer tf(vocab, 16, 24);
    Rng rng(500 + draw);
    tf.init_parameters(rng);
    Rng seq_rng(900 + draw);
    Sequence prefix = {0};
    for (int i = 0; i < 4; ++i) prefix.push_back(3 + static_cast<TokenId>(seq_rng.next_below(11)));
    Sequence cont;
    for (int i = 0; i < 5; ++i) cont.push_back(3 + static_cast<TokenId>(seq_rng.next_below(11)));
    cont.push_back(1);
    GradientAccumulator acc(tf.params().layout());
    tf.grad_logprob(prefix, cont, acc, 1.0);
    auto value = [&] { return logprob(tf, prefix, cont).total; };
    worst = std::max(worst,
                     verify_detail::gradcheck_rel_error(tf, acc.values(), value, tf.params()));
  }
  return make_check("policy.transformer_grad_vs_fd", worst, 1e-4);
}

inline CheckResult check_grad_linearity(int threads) {
  (void)threads;
  VerificationInstance inst = standard_instance();
  const Sequence prefix = {0, 3}, cont = {4, 4, 1};
  GradientAccumulator twice(inst.policy->params().layout());
  inst.policy->grad_logprob(prefix, cont, twice, 0.7);
  inst.policy->grad_logprob(prefix, cont, twice, 0.3);
  GradientAccumulator once(inst.policy->params().layout());
  inst.policy->grad_logprob(prefix, cont, once, 1.0);
  double worst = 0.0;
  for (std::size_t i = 0; i < once.size(); ++i) {
    worst = std::max(worst, std::abs(twice[i] - once[i]));
  }
  return make_check("policy.grad_accumulation_linearity", worst, 1e-12);
}

inline CheckResult check_snapshot(int threads) {
  (void)threads;
  VerificationInstance inst = standard_instance();
  auto snap = inst.policy->clone();
  const Sequence prefix = {0, 3}, cont = {4, 1};
  const double before = logprob(*snap, prefix, cont).total;
  for (std::size_t i = 0; i < inst.policy->params().size(); ++i) inst.policy->params()[i] += 0.37;
  const double after = logprob(*snap, prefix, cont).total;
  double worst = std::abs(after - before);  // must be bit-identical
  // KL(theta || snapshot) over the full rationale space is 0 right after
  // snapshotting (measured before the perturbation via a second clone).
  auto fresh = snap->clone();
  double kl = 0.0;
  for (const EnumeratedSequence& es : enumerate_rationales(*snap, prefix, 3)) {
    kl += es.probability *
          (logprob(*snap, prefix, es.tokens).total - logprob(*fresh, prefix, es.tokens).total);
  }
  worst = std::max(worst, std::abs(kl));
  return make_check("policy.snapshot_frozen_and_kl_zero", worst, 0.0);
}

inline CheckResult check_enumeration_mass(int threads) {
  (void)threads;
  Vocabulary vocab(0, 1, 2, {"^", "$", "@", "a"});
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    auto tab = random_tabular(vocab, 1, 40 + draw);
    double sum = 0.0;
    for (const EnumeratedSequence& es : enumerate_rationales(*tab, {0, 3}, 3)) {
      sum += es.probability;
    }
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return make_check("policy.enumeration_mass_sums_to_one", worst, 1e-10);
}

inline CheckResult check_enumeration_vs_mc(int threads) {
  VerificationInstance inst = standard_instance();
  const Sequence prefix = inst.example.query;
  double exact_len = 0.0;
  for (const EnumeratedSequence& es : enumerate_rationales(*inst.policy, prefix, 3)) {
    exact_len += es.probability * static_cast<double>(es.tokens.size());
  }
  const long n = 200000;
  constexpr long kBlock = 4096;
  const long blocks = (n + kBlock - 1) / kBlock;
  std::vector<double> sums(static_cast<std::size_t>(blocks), 0.0);
  std::vector<double> sqs(static_cast<std::size_t>(blocks), 0.0);
  parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t b) {
    const long lo = static_cast<long>(b) * kBlock, hi = std::min(n, lo + kBlock);
    for (long i = lo; i < hi; ++i) {
      Rng rng(seed_hash({9000, static_cast<std::uint64_t>(i)}));
      Sequence raw = sample_sequence(*inst.policy, prefix, 3, 1.0, rng, {1, 2});
      const double len = static_cast<double>(raw.size());
      sums[b] += len;
      sqs[b] += len * len;
    }
  });
  double sum = 0.0, sq = 0.0;
  for (long b = 0; b < blocks; ++b) {
    sum += sums[static_cast<std::size_t>(b)];
    sq += sqs[static_cast<std::size_t>(b)];
  }
  const double mean = sum / n;
  const double var = (sq / n - mean * mean) * n / (n - 1.0);
  const double se = std::sqrt(var / n);
  return make_check("policy.enumeration_vs_monte_carlo", std::abs(mean - exact_len) / se, 4.0,
                    true, "expected length, z-score over 200000 draws");
}

inline CheckResult check_sampling_frequencies(int threads) {
  (void)threads;
  VerificationInstance inst = standard_instance();
  const Sequence prefix = {0, 4};
  std::vector<double> probs = softmax(inst.policy->next_logits(prefix));
  std::vector<long> counts(probs.size(), 0);
  const long n = 100000;
  Rng rng(31337);
  std::vector<double> logits = inst.policy->next_logits(prefix);
  for (long i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_token(logits, 1.0, &rng))];
  double worst = 0.0;
  for (std::size_t t = 0; t < probs.size(); ++t) {
    const double freq = static_cast<double>(counts[t]) / n;
    const double bound = 4.0 * std::sqrt(probs[t] * (1.0 - probs[t]) / n);
    worst = std::max(worst, std::abs(freq - probs[t]) / bound);
  }
  return make_check("policy.sampling_matches_softmax", worst, 1.0, true,
                    "max |freq-p| / (4 sqrt(p(1-p)/n))");
}

inline CheckResult check_greedy_mode(int threads) {
  (void)threads;
  VerificationInstance inst = standard_instance();
  Rng rng(5);
  Sequence greedy = sample_sequence(*inst.policy, inst.example.query, 3, 0.0, rng, {1, 2});
  // independent argmax walk
  Sequence expect;
  Sequence ctx = inst.example.query;
  for (int step = 0; step < 3; ++step) {
    std::vector<double> logits = inst.policy->next_logits(ctx);
    TokenId best = 0;
    for (TokenId t = 1; t < inst.vocab.size(); ++t) {
      if (logits[static_cast<std::size_t>(t)] > logits[static_cast<std::size_t>(best)]) best = t;
    }
    expect.push_back(best);
    ctx.push_back(best);
    if (best == 1 || best == 2) break;
  }
  return make_check("policy.greedy_equals_argmax_trace", greedy == expect ? 0.0 : 1.0, 0.0);
}

inline CheckResult check_score_identity(int threads) {
  (void)threads;
  Vocabulary vocab(0, 1, 2, {"^", "$", "@", "a", "b"});
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    auto tab = random_tabular(vocab, 1, 600 + draw);
    for (double coord : enumerated_score_mean(*tab, {0, 3}, 3)) {
      worst = std::max(worst, std::abs(coord));
    }
  }
  return make_check("estimator.score_function_identity", worst, 1e-9, true,
                    "max coordinate of enumerated E[grad log pi(z|x)], 20 instances");
}

// --- estimator checks -------------------------------------------------------

inline CheckResult check_rloo_algebra(int threads) {
  (void)threads;
  Rng rng(808);
  double worst_zero_sum = 0.0, worst_shift = 0.0;
  for (int trial = 0; trial < 10000; ++trial) {
    const int k = 2 + static_cast<int>(rng.next_below(15));
    std::vector<double> rewards(static_cast<std::size_t>(k));
    double max_abs = 0.0;
    for (double& r : rewards) {
      r = 20.0 * (rng.next_double() - 0.5);
      max_abs = std::max(max_abs, std::abs(r));
    }
    std::vector<double> adv = rloo_advantages(rewards);
    double sum = 0.0;
    for (double a : adv) sum += a;
    worst_zero_sum = std::max(worst_zero_sum, std::abs(sum) / (1e-9 * k * std::max(max_abs, 1e-30)));
    const double shift = 10.0 * (rng.next_double() - 0.5);
    std::vector<double> shifted = rewards;
    for (double& r : shifted) r += shift;
    std::vector<double> adv2 = rloo_advantages(shifted);
    for (std::size_t i = 0; i < adv.size(); ++i) {
      worst_shift = std::max(worst_shift, std::abs(adv[i] - adv2[i]));
    }
  }
  CheckResult c = make_check("estimator.rloo_zero_sum_and_shift_invariance",
                             std::max(worst_zero_sum, worst_shift / 1e-12), 1.0, true,
                             "zero-sum scaled by 1e-9*K*max|r|; shift tolerance 1e-12");
  return c;
}

inline CheckResult check_reward_recomputability(int threads) {
  (void)threads;
  VerificationInstance inst = standard_instance();
  Rng rng(1212);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    RolloutBatch batch =
        make_rollout_batch(*inst.policy, *inst.reference, inst.example, inst.rollout, rng);
    for (const RolloutSample& s : batch.samples) {
      const double recomputed = s.logp_y - inst.rollout.beta_kl * (s.logp_z_cur - s.logp_z_ref) -
                                (s.terminated ? 0.0 : inst.rollout.gamma_trunc);
      worst = std::max(worst, std::abs(recomputed - s.reward));
      // gamma monotonicity on truncated samples; beta=0 reduces to logp_y
      RolloutSample more = s;
      more.reward = s.logp_y - inst.rollout.beta_kl * (s.logp_z_cur - s.logp_z_ref) -
                    (s.terminated ? 0.0 : inst.rollout.gamma_trunc + 1.0);
      if (!s.terminated) {
        worst = std::max(worst, std::abs((s.reward - more.reward) - 1.0));
      } else {
        worst = std::max(worst, std::abs(s.reward - more.reward));
      }
    }
  }
  GeneratedRationale gen;
  Rng rng2(77);
  Sequence raw = sample_sequence(*inst.policy, inst.example.query, 3, 1.0, rng2, {1, 2});
  gen = cut_rationale(inst.vocab, raw);
  RolloutSample beta0 =
      self_reward(*inst.policy, *inst.reference, inst.example, gen, 0.0, inst.rollout.gamma_trunc);
  if (beta0.terminated) {
    worst = std::max(worst, std::abs(beta0.reward - beta0.logp_y));
  }
  return make_check("rollout.reward_recomputable", worst, 1e-12);
}

inline CheckResult check_kl_estimator_consistency(int threads) {
  VerificationInstance inst = standard_instance();
  double exact_kl = 0.0;
  for (const EnumeratedSequence& es :
       enumerate_rationales(*inst.policy, inst.example.query, inst.rollout.max_len)) {
    exact_kl += es.probability * (logprob(*inst.policy, inst.example.query, es.tokens).total -
                                  logprob(*inst.reference, inst.example.query, es.tokens).total);
  }
  const long n = 200000;
  constexpr long kBlock = 4096;
  const long blocks = (n + kBlock - 1) / kBlock;
  std::vector<double> sums(static_cast<std::size_t>(blocks), 0.0),
      sqs(static_cast<std::size_t>(blocks), 0.0);
  parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t b) {
    const long lo = static_cast<long>(b) * kBlock, hi = std::min(n, lo + kBlock);
    for (long i = lo; i < hi; ++i) {
      Rng rng(seed_hash({12000, static_cast<std::uint64_t>(i)}));
      Sequence raw =
          sample_sequence(*inst.policy, inst.example.query, inst.rollout.max_len, 1.0, rng, {1, 2});
      const double ratio = logprob(*inst.policy, inst.example.query, raw).total -
                           logprob(*inst.reference, inst.example.query, raw).total;
      sums[b] += ratio;
      sqs[b] += ratio * ratio;
    }
  });
  double sum = 0.0, sq = 0.0;
  for (long b = 0; b < blocks; ++b) {
    sum += sums[static_cast<std::size_t>(b)];
    sq += sqs[static_cast<std::size_t>(b)];
  }
  const double mean = sum / n;
  const double var = (sq / n - mean * mean) * n / (n - 1.0);
  const double se = std::sqrt(var / n);
  return make_check("rollout.sequence_kl_estimator_consistency", std::abs(mean - exact_kl) / se,
                    4.0, true, "z-score of mean log-ratio vs enumerated KL, 200000 samples");
}

struct UnbiasednessReport {
  CheckResult within_se;
  CheckResult cosine;
  double trace = 0.0;
  std::vector<double> mean, stderr_mean, oracle;  // per coordinate
};

// Criterion-1 machinery, with an optional advantage-sign mutation used by the
// deliberate-bug smoke test.
inline UnbiasednessReport unbiasedness_report(EstimatorKind kind, long replicates, int threads,
                                              bool flip_advantage_sign = false) {
  VerificationInstance inst = standard_instance();
  std::vector<double> oracle =
      exact_gradient_oracle(*inst.policy, *inst.reference, inst.example, inst.rollout.beta_kl,
                            inst.rollout.gamma_trunc, inst.rollout.max_len);

  const std::size_t dim = inst.policy->params().size();
  constexpr long kBlock = 256;
  const long blocks = (replicates + kBlock - 1) / kBlock;
  std::vector<std::vector<double>> bsum(static_cast<std::size_t>(blocks)),
      bsq(static_cast<std::size_t>(blocks));
  parallel_for(static_cast<std::size_t>(blocks), threads, [&](std::size_t b) {
    bsum[b].assign(dim, 0.0);
    bsq[b].assign(dim, 0.0);
    GradientAccumulator acc(inst.policy->params().layout());
    const long lo = static_cast<long>(b) * kBlock, hi = std::min(replicates, lo + kBlock);
    for (long rep = lo; rep < hi; ++rep) {
      Rng rng(seed_hash({31000, static_cast<std::uint64_t>(rep)}));
      RolloutBatch batch =
          make_rollout_batch(*inst.policy, *inst.reference, inst.example, inst.rollout, rng);
      std::vector<RolloutBatch> batches;
      batches.push_back(std::move(batch));
      acc.reset();
      if (kind == EstimatorKind::kRloo) {
        fill_advantages(batches[0]);
        if (flip_advantage_sign) {
          for (RolloutSample& s : batches[0].samples) s.advantage = -s.advantage;
        }
        assemble_gradient(*inst.policy, batches, acc);
      } else {
        naive_reinforce_gradient(*inst.policy, batches, acc);
      }
      for (std::size_t i = 0; i < dim; ++i) {
        bsum[b][i] += acc[i];
        bsq[b][i] += acc[i] * acc[i];
      }
    }
  });

  std::vector<double> mean(dim, 0.0), se(dim, 0.0);
  double trace = 0.0;
  {
    std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
    for (long b = 0; b < blocks; ++b) {
      for (std::size_t i = 0; i < dim; ++i) {
        sum[i] += bsum[static_cast<std::size_t>(b)][i];
        sq[i] += bsq[static_cast<std::size_t>(b)][i];
      }
    }
    const double n = static_cast<double>(replicates);
    for (std::size_t i = 0; i < dim; ++i) {
      mean[i] = sum[i] / n;
      const double var = std::max(0.0, sq[i] / n - mean[i] * mean[i]) * n / (n - 1.0);
      trace += var;
      se[i] = std::sqrt(var / n);
    }
  }

  double worst_z = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    // Zero-variance coordinates (the answer-term rows are deterministic at
    // m=1) get an exactness floor of 1e-12 in place of a standard error.
    const double denom = std::max(se[i], 2.5e-13 * (1.0 + std::abs(oracle[i])));
    worst_z = std::max(worst_z, std::abs(mean[i] - oracle[i]) / denom);
  }
  const std::string label =
      kind == EstimatorKind::kRloo ? "estimator.rloo_unbiasedness" : "estimator.reinforce_unbiasedness";
  UnbiasednessReport rep{
      make_check(label + ".max_z_score", worst_z, 4.0, true,
                 std::to_string(replicates) + " replicates vs exact oracle"),
      make_check(label + ".cosine", verify_detail::cosine(mean, oracle), 0.999, false),
      trace,
      std::move(mean),
      std::move(se),
      std::move(oracle)};
  return rep;
}

inline CheckResult check_cross_oracle_agreement(int threads) {
  (void)threads;
  Vocabulary vocab(0, 1, 2, {"^", "$", "@", "a", "b"});
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 5; ++draw) {
    auto theta = random_tabular(vocab, 1, 7000 + draw);
    auto ref = random_tabular(vocab, 1, 7100 + draw);
    Example ex;
    ex.query = {0, static_cast<TokenId>(3 + draw % 2)};
    ex.answer = {static_cast<TokenId>(4 - draw % 2), 1};
    std::vector<double> exact = exact_gradient_oracle(*theta, *ref, ex, 0.05, 2.0, 3);
    std::vector<double> fd = fd_gradient_oracle(*theta, *ref, ex, 0.05, 2.0, 3);
    worst = std::max(worst, verify_detail::rel_l2(exact, fd));
  }
  return make_check("estimator.cross_oracle_relative_l2", worst, 1e-6, true,
                    "exact vs FD of the enumerated objective, 5 instances");
}

inline CheckResult check_elbo(int threads) {
  (void)threads;
  Vocabulary vocab(0, 1, 2, {"^", "$", "@", "a", "b"});
  double worst_violation = -1e300, worst_gap = 0.0;
  for (std::uint64_t draw = 0; draw < 100; ++draw) {
    auto theta = random_tabular(vocab, 1, 20000 + draw);
    auto ref = random_tabular(vocab, 1, 21000 + draw);
    Example ex;
    ex.query = {0, 3};
    ex.answer = {4, 1};
    ElboResult r = elbo_exact(*theta, *ref, ex, 3);
    worst_violation = std::max(worst_violation, r.elbo - r.log_marginal);
    worst_gap = std::max(worst_gap, std::abs((r.log_marginal - r.elbo) - r.posterior_kl));
  }
  return make_check("estimator.elbo_inequality_and_posterior_gap",
                    std::max(worst_violation, worst_gap), 1e-10, true,
                    "max(elbo - log_marginal, |gap - posterior KL|) over 100 draws");
}

// --- eval checks ------------------------------------------------------------

inline CheckResult check_p_m(int threads) {
  (void)threads;
  VerificationInstance inst = vote_frequency_instance();
  DecodeLimits limits{2, 2};
  std::map<Sequence, double> marginal = p_m_exact(*inst.policy, inst.example.query, limits);
  double sum = 0.0;
  for (const auto& [ans, p] : marginal) sum += p;
  double worst = std::abs(sum - 1.0);

  // symmetric instance: two interchangeable content tokens get equal mass
  auto sym = std::make_unique<TabularPolicy>(inst.vocab, 1);
  std::size_t v = 5;
  for (std::size_t row = 0; row < v; ++row) {
    double* r = sym->params().data() + row * v;
    r[0] = -2.0;
    r[1] = 0.3;
    r[2] = 0.4;
    r[3] = 0.9;
    r[4] = 0.9;  // tokens a and b identical everywhere
  }
  std::map<Sequence, double> m2 = p_m_exact(*sym, {0}, DecodeLimits{2, 1});
  worst = std::max(worst, std::abs(m2.at({3}) - m2.at({4})));
  return make_check("eval.p_m_mass_and_symmetry", worst, 1e-10);
}

inline CheckResult check_vote_frequency(int threads, std::vector<VoteFrequencyRow>* rows_out = nullptr) {
  VerificationInstance inst = vote_frequency_instance();
  DecodeLimits limits{2, 2};
  std::vector<VoteFrequencyRow> rows =
      vote_frequency_convergence(*inst.policy, inst.example, limits, {64, 512, 4096}, 50, 616, threads);
  if (rows_out) *rows_out = rows;
  double worst = 0.0;
  // bound applies at K=4096; deviations must decrease across the K ladder
  const VoteFrequencyRow& last = rows.back();
  for (std::size_t a = 0; a < last.abs_deviation.size(); ++a) {
    worst = std::max(worst, last.abs_deviation[a] / last.bound[a]);
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].mean_abs_deviation >= rows[i - 1].mean_abs_deviation) worst = std::max(worst, 2.0);
  }
  return make_check("eval.vote_frequency_convergence", worst, 1.0, true,
                    "K=4096 binomial bound and monotone decrease over K in {64,512,4096}");
}

inline CheckResult check_vote_frequency_unbiasedness(int threads) {
  VerificationInstance inst = vote_frequency_instance();
  DecodeLimits limits{2, 2};
  std::map<Sequence, double> marginal = p_m_exact(*inst.policy, inst.example.query, limits);
  auto tracked = top_answers(marginal, 1);
  const Sequence target = tracked[0].first;
  const double p_exact = tracked[0].second;
  const int reseeds = 1000;
  const long draws = 64;
  std::vector<double> freqs(reseeds, 0.0);
  parallel_for(static_cast<std::size_t>(reseeds), threads, [&](std::size_t rs) {
    long count = 0;
    for (long j = 0; j < draws; ++j) {
      Rng rng(seed_hash({717, static_cast<std::uint64_t>(rs), static_cast<std::uint64_t>(j)}));
      Sequence pred = strip_trailing_eos(
          sample_prediction(*inst.policy, inst.example, limits, 1.0, rng), inst.vocab.eos());
      if (pred == target) ++count;
    }
    freqs[rs] = static_cast<double>(count) / static_cast<double>(draws);
  });
  double mean = 0.0, sq = 0.0;
  for (double f : freqs) {
    mean += f / reseeds;
    sq += f * f / reseeds;
  }
  const double var = std::max(0.0, sq - mean * mean) * reseeds / (reseeds - 1.0);
  const double se = std::sqrt(var / reseeds);
  return make_check("eval.vote_frequency_unbiased", std::abs(mean - p_exact) / se, 4.0, true,
                    "z-score of mean F-hat over 1000 reseeds vs p_M");
}

inline CheckResult check_majority_vote_oracle(int threads) {
  VerificationInstance inst = majority_vote_instance();
  DecodeLimits limits{2, 1};
  std::map<Sequence, double> marginal = p_m_exact(*inst.policy, inst.example.query, limits);
  // exact win probability of the correct answer under maj@15
  std::vector<Sequence> keys;
  std::vector<double> probs;
  std::size_t target_idx = 0;
  const Sequence target = strip_trailing_eos(inst.example.answer, inst.vocab.eos());
  for (const auto& [ans, p] : marginal) {
    if (ans == target) target_idx = keys.size();
    keys.push_back(ans);
    probs.push_back(p);
  }
  const int k = 15;
  const double exact_win = vote_win_prob_exact(probs, k, target_idx);
  const double single = marginal.at(target);

  const int replicates = 20000;
  std::vector<char> wins(static_cast<std::size_t>(replicates), 0);
  parallel_for(static_cast<std::size_t>(replicates), threads, [&](std::size_t rep) {
    std::vector<Sequence> preds;
    preds.reserve(k);
    for (int j = 0; j < k; ++j) {
      Rng rng(seed_hash({818, rep, static_cast<std::uint64_t>(j)}));
      preds.push_back(sample_prediction(*inst.policy, inst.example, limits, 1.0, rng));
    }
    wins[rep] =
        answers_equal(majority_vote(preds, inst.vocab.eos()), inst.example.answer, inst.vocab.eos())
            ? 1
            : 0;
  });
  double freq = 0.0;
  for (char w : wins) freq += w;
  freq /= replicates;
  const double se = std::sqrt(exact_win * (1.0 - exact_win) / replicates);
  double worst = std::abs(freq - exact_win) / (4.0 * se);
  if (exact_win <= single) worst = std::max(worst, 2.0);  // maj@15 must beat single-sample
  return make_check("eval.majority_vote_exact_oracle", worst, 1.0, true,
                    "maj@15 empirical vs exhaustive vote enumeration (p_M(correct)=0.6), 20000 replicates");
}

// --- optimizer checks -------------------------------------------------------

inline CheckResult check_optimizer(int threads) {
  (void)threads;
  double worst = 0.0;
  Layout layout({{"w", 0, 2}});
  {
    ParameterVector theta(layout);
    GradientAccumulator g(layout);
    g[0] = 1.0;
    Optimizer opt(OptimizerKind::kSgd, 2);
    opt.step(theta, g, 0.1);
    worst = std::max(worst, std::abs(theta[0] - 0.1));
    worst = std::max(worst, std::abs(theta[1]));
  }
  {
    // adaptive moments against the hand recurrence, constant gradient
    ParameterVector theta(layout);
    GradientAccumulator g(layout);
    g[0] = 0.5;
    Optimizer opt(OptimizerKind::kAdaptiveMoments, 2);
    double m = 0.0, v = 0.0, ref = 0.0;
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    for (int t = 1; t <= 200; ++t) {
      opt.step(theta, g, lr);
      m = b1 * m + (1 - b1) * 0.5;
      v = b2 * v + (1 - b2) * 0.25;
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      ref += lr * mhat / (std::sqrt(vhat) + eps);
      worst = std::max(worst, std::abs(theta[0] - ref));
    }
    // with bias correction saturated the per-step move approaches lr
    const double before = theta[0];
    opt.step(theta, g, lr);
    worst = std::max(worst, std::abs(std::abs(theta[0] - before) - lr) / lr > 0.01 ? 1.0 : 0.0);
  }
  {
    ParameterVector theta(layout);
    theta[0] = 3.0;
    GradientAccumulator g(layout);
    Optimizer opt(OptimizerKind::kAdaptiveMoments, 2);
    opt.step(theta, g, 0.5);
    worst = std::max(worst, std::abs(theta[0] - 3.0));
  }
  return make_check("trainer.optimizer_recurrences", worst, 1e-12);
}

// ---------------------------------------------------------------------------
// Full verification run.
// ---------------------------------------------------------------------------

// Harness data behind the unbiasedness/variance checks, exposed so the
// verify command can emit the variance-harness report without a second run.
struct VerificationArtifacts {
  UnbiasednessReport rloo;
  UnbiasednessReport reinforce;

  nlohmann::json harness_json() const {
    nlohmann::json coords = nlohmann::json::array();
    for (std::size_t i = 0; i < rloo.mean.size(); ++i) {
      coords.push_back({{"coordinate", i},
                        {"mean", rloo.mean[i]},
                        {"stderr", rloo.stderr_mean[i]},
                        {"exact_oracle", rloo.oracle[i]}});
    }
    return {{"per_coordinate", coords},
            {"covariance_trace_rloo", rloo.trace},
            {"covariance_trace_reinforce", reinforce.trace}};
  }
};

inline std::vector<CheckResult> run_verification(int threads,
                                                 VerificationArtifacts* artifacts = nullptr) {
  std::vector<CheckResult> out;
  out.push_back(check_normalization(threads));
  out.push_back(check_chain_rule(threads));
  out.push_back(check_tabular_grad_fd(threads));
  out.push_back(check_transformer_grad_fd(threads));
  out.push_back(check_grad_linearity(threads));
  out.push_back(check_snapshot(threads));
  out.push_back(check_enumeration_mass(threads));
  out.push_back(check_enumeration_vs_mc(threads));
  out.push_back(check_sampling_frequencies(threads));
  out.push_back(check_greedy_mode(threads));
  out.push_back(check_score_identity(threads));
  out.push_back(check_rloo_algebra(threads));
  out.push_back(check_reward_recomputability(threads));
  out.push_back(check_kl_estimator_consistency(threads));
  {
    UnbiasednessReport rloo = unbiasedness_report(EstimatorKind::kRloo, 200000, threads);
    UnbiasednessReport reinf = unbiasedness_report(EstimatorKind::kNaiveReinforce, 200000, threads);
    out.push_back(rloo.within_se);
    out.push_back(rloo.cosine);
    out.push_back(reinf.within_se);
    out.push_back(make_check("estimator.variance_rloo_le_reinforce",
                             rloo.trace / std::max(reinf.trace, 1e-300), 1.0, true,
                             "trace(RLOO)=" + std::to_string(rloo.trace) +
                                 " trace(REINFORCE)=" + std::to_string(reinf.trace)));
    if (artifacts) {
      artifacts->rloo = std::move(rloo);
      artifacts->reinforce = std::move(reinf);
    }
  }
  out.push_back(check_cross_oracle_agreement(threads));
  out.push_back(check_elbo(threads));
  out.push_back(check_p_m(threads));
  out.push_back(check_vote_frequency(threads));
  out.push_back(check_vote_frequency_unbiasedness(threads));
  out.push_back(check_majority_vote_oracle(threads));
  out.push_back(check_optimizer(threads));
  return out;
}

}  // namespace latro
