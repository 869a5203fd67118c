#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "latro/parallel.hpp"
#include "latro/rollout.hpp"

namespace latro {

// Leave-one-out advantages: A_k = r_k - mean of the other K-1 rewards.
inline std::vector<double> rloo_advantages(const std::vector<double>& rewards) {
  const std::size_t k = rewards.size();
  require(k >= 2, "rloo_advantages requires K >= 2");
  double sum = 0.0;
  for (double r : rewards) sum += r;
  std::vector<double> adv(k);
  for (std::size_t i = 0; i < k; ++i) {
    adv[i] = rewards[i] - (sum - rewards[i]) / static_cast<double>(k - 1);
  }
  return adv;
}

inline void fill_advantages(RolloutBatch& batch) {
  std::vector<double> rewards;
  rewards.reserve(batch.samples.size());
  for (const RolloutSample& s : batch.samples) rewards.push_back(s.reward);
  std::vector<double> adv = rloo_advantages(rewards);
  for (std::size_t i = 0; i < adv.size(); ++i) batch.samples[i].advantage = adv[i];
}

namespace detail {

// Shared body of the two estimators. `coef(sample)` scales the score term:
// the RLOO advantage or the raw reward.
template <typename Coef>
void accumulate_policy_gradient(const PolicyModel& policy, const std::vector<RolloutBatch>& batches,
                                GradientAccumulator& acc, Coef&& coef) {
  require(acc.layout() == policy.params().layout(), "accumulator layout mismatch");
  std::size_t total_samples = 0;
  for (const RolloutBatch& b : batches) total_samples += b.samples.size();
  require(total_samples > 0, "no rollout samples");
  const double inv_nk = 1.0 / static_cast<double>(total_samples);

  for (const RolloutBatch& b : batches) {
    const Example& ex = *b.example;
    for (const RolloutSample& s : b.samples) {
      double c = coef(s);
      if (c != 0.0 && !s.raw.empty()) {
        policy.grad_logprob(ex.query, s.raw, acc, inv_nk * c);
      }
      policy.grad_logprob(answer_context(policy.vocab(), ex.query, s.rationale), ex.answer, acc,
                          inv_nk);
    }
  }
}

}  // namespace detail

// Empirical gradient of the objective, averaged over all N*K samples:
//   (1/NK) sum_i sum_k [ grad log pi(z_k|x_i) * A_k + grad log pi(y_i|x_i+z_k+ANS) ].
// Advantages must already be filled via rloo_advantages.
inline void assemble_gradient(const PolicyModel& policy, const std::vector<RolloutBatch>& batches,
                              GradientAccumulator& acc) {
  for (const RolloutBatch& b : batches) {
    require(b.samples.size() >= 2, "assemble_gradient requires K >= 2 per batch");
  }
  detail::accumulate_policy_gradient(policy, batches, acc,
                                     [](const RolloutSample& s) { return s.advantage; });
}

// Baseline-free REINFORCE: raw r(z_k) in place of A_k. K = 1 is permitted.
inline void naive_reinforce_gradient(const PolicyModel& policy,
                                     const std::vector<RolloutBatch>& batches,
                                     GradientAccumulator& acc) {
  detail::accumulate_policy_gradient(policy, batches, acc,
                                     [](const RolloutSample& s) { return s.reward; });
}

// ---------------------------------------------------------------------------
// Exact oracles by enumeration of the rationale space. These target the same
// function the estimators sample: z is the raw generated sequence (terminator
// included), the answer is conditioned on x + usable(z) + ANS, gamma applies
// to non-terminated length-L sequences, and the KL log-ratio is taken over the
// raw sequence likelihoods.
// ---------------------------------------------------------------------------

struct EnumeratedRationale {
  Sequence raw;
  Sequence usable;
  bool terminated = false;
  double prob = 0.0;        // mass under the current policy
  double logp_cur = 0.0;    // log pi_theta(raw | x)
  double logp_ref = 0.0;    // log pi_0(raw | x)
  double logp_y = 0.0;      // log pi_theta(y | x + usable + ANS)
  double reward = 0.0;
};

inline std::vector<EnumeratedRationale> enumerate_rationale_space(
    const PolicyModel& policy, const PolicyModel& policy_ref, const Example& example,
    double beta_kl, double gamma_trunc, std::size_t max_len) {
  std::vector<EnumeratedRationale> out;
  for (const EnumeratedSequence& es : enumerate_rationales(policy, example.query, max_len)) {
    EnumeratedRationale er;
    GeneratedRationale gen = cut_rationale(policy.vocab(), es.tokens);
    er.raw = std::move(gen.raw);
    er.usable = std::move(gen.rationale);
    er.terminated = gen.terminated;
    er.prob = es.probability;
    er.logp_cur = logprob(policy, example.query, er.raw).total;
    er.logp_ref = logprob(policy_ref, example.query, er.raw).total;
    er.logp_y =
        logprob(policy, answer_context(policy.vocab(), example.query, er.usable), example.answer)
            .total;
    er.reward = er.logp_y - beta_kl * (er.logp_cur - er.logp_ref) -
                (er.terminated ? 0.0 : gamma_trunc);
    out.push_back(std::move(er));
  }
  return out;
}

// J(theta) = E_z[ log pi(y|x+z+ANS) - gamma*[trunc] ] - beta * E_z[ log(pi/pi_0) ].
inline double objective_exact(const PolicyModel& policy, const PolicyModel& policy_ref,
                              const Example& example, double beta_kl, double gamma_trunc,
                              std::size_t max_len) {
  double value = 0.0;
  for (const EnumeratedRationale& er :
       enumerate_rationale_space(policy, policy_ref, example, beta_kl, gamma_trunc, max_len)) {
    value += er.prob * er.reward;
  }
  return value;
}

// Exact score-function gradient: E_z[ grad log pi(z|x) * r(z) + grad log pi(y|x+z+ANS) ].
inline std::vector<double> exact_gradient_oracle(const PolicyModel& policy,
                                                 const PolicyModel& policy_ref,
                                                 const Example& example, double beta_kl,
                                                 double gamma_trunc, std::size_t max_len) {
  GradientAccumulator acc(policy.params().layout());
  for (const EnumeratedRationale& er :
       enumerate_rationale_space(policy, policy_ref, example, beta_kl, gamma_trunc, max_len)) {
    if (er.prob * er.reward != 0.0) {
      policy.grad_logprob(example.query, er.raw, acc, er.prob * er.reward);
    }
    policy.grad_logprob(answer_context(policy.vocab(), example.query, er.usable), example.answer,
                        acc, er.prob);
  }
  return acc.values();
}

// Central finite differences of objective_exact, coordinate by coordinate.
inline std::vector<double> fd_gradient_oracle(PolicyModel& policy, const PolicyModel& policy_ref,
                                              const Example& example, double beta_kl,
                                              double gamma_trunc, std::size_t max_len,
                                              double step = 1e-5) {
  ParameterVector& theta = policy.params();
  std::vector<double> grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + step;
    double up = objective_exact(policy, policy_ref, example, beta_kl, gamma_trunc, max_len);
    theta[i] = orig - step;
    double down = objective_exact(policy, policy_ref, example, beta_kl, gamma_trunc, max_len);
    theta[i] = orig;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// E_z[ grad log pi(z|x) ] over the enumerated raw distribution. Zero by the
// score-function identity; the baseline term the estimator drops.
inline std::vector<double> enumerated_score_mean(const PolicyModel& policy,
                                                 const Sequence& prefix, std::size_t max_len) {
  GradientAccumulator acc(policy.params().layout());
  for (const EnumeratedSequence& es : enumerate_rationales(policy, prefix, max_len)) {
    policy.grad_logprob(prefix, es.tokens, acc, es.probability);
  }
  return acc.values();
}

// ---------------------------------------------------------------------------
// Evidence lower bound, exactly, for the inequality and posterior-gap checks.
// ---------------------------------------------------------------------------

struct ElboResult {
  double elbo = 0.0;          // E_z[log pi(y|x+z+ANS)] - KL(pi_theta || pi_0)
  double log_marginal = 0.0;  // log sum_z pi_0(z|x) pi_theta(y|x+z+ANS)
  double posterior_kl = 0.0;  // KL(pi_theta(z|x) || p(z|x,y)), enumerated directly
};

inline ElboResult elbo_exact(const PolicyModel& policy, const PolicyModel& policy_ref,
                             const Example& example, std::size_t max_len) {
  std::vector<EnumeratedRationale> space =
      enumerate_rationale_space(policy, policy_ref, example, 0.0, 0.0, max_len);

  double expected_logp_y = 0.0;
  double kl = 0.0;
  double max_term = -std::numeric_limits<double>::infinity();
  std::vector<double> log_joint(space.size());  // log pi_0(z) + log pi(y|.)
  for (std::size_t i = 0; i < space.size(); ++i) {
    const EnumeratedRationale& er = space[i];
    expected_logp_y += er.prob * er.logp_y;
    kl += er.prob * (er.logp_cur - er.logp_ref);
    log_joint[i] = er.logp_ref + er.logp_y;
    max_term = std::max(max_term, log_joint[i]);
  }
  double z = 0.0;
  for (double lj : log_joint) z += std::exp(lj - max_term);
  ElboResult out;
  out.log_marginal = max_term + std::log(z);
  out.elbo = expected_logp_y - kl;
  double pkl = 0.0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    // posterior log-mass: log_joint - log_marginal
    pkl += space[i].prob * (space[i].logp_cur - (log_joint[i] - out.log_marginal));
  }
  out.posterior_kl = pkl;
  return out;
}

// ---------------------------------------------------------------------------
// Replicated-rollout harness: empirical mean/covariance of an estimator on a
// fixed instance, deterministic for any thread count (fixed-size replicate
// blocks, reduced in block order).
// ---------------------------------------------------------------------------

struct HarnessResult {
  std::vector<double> mean;
  std::vector<double> stderr_mean;   // per-coordinate standard error of the mean
  double covariance_trace = 0.0;     // sum of per-coordinate sample variances
  long replicates = 0;
};

enum class EstimatorKind { kRloo, kNaiveReinforce };

inline HarnessResult replicate_gradient_samples(const PolicyModel& policy,
                                                const PolicyModel& policy_ref,
                                                const Example& example, const RolloutConfig& cfg,
                                                EstimatorKind kind, long replicates,
                                                std::uint64_t seed, int threads) {
  const std::size_t dim = policy.params().size();
  constexpr long kBlock = 256;
  const long num_blocks = (replicates + kBlock - 1) / kBlock;

  std::vector<std::vector<double>> block_sum(static_cast<std::size_t>(num_blocks));
  std::vector<std::vector<double>> block_sumsq(static_cast<std::size_t>(num_blocks));

  parallel_for(static_cast<std::size_t>(num_blocks), threads, [&](std::size_t bi) {
    std::vector<double>& sum = block_sum[bi];
    std::vector<double>& sumsq = block_sumsq[bi];
    sum.assign(dim, 0.0);
    sumsq.assign(dim, 0.0);
    GradientAccumulator acc(policy.params().layout());
    const long lo = static_cast<long>(bi) * kBlock;
    const long hi = std::min(replicates, lo + kBlock);
    for (long rep = lo; rep < hi; ++rep) {
      Rng rng(seed_hash({seed, seed_domain::kHarness, static_cast<std::uint64_t>(rep)}));
      RolloutBatch batch = make_rollout_batch(policy, policy_ref, example, cfg, rng);
      acc.reset();
      std::vector<RolloutBatch> batches;
      batches.push_back(std::move(batch));
      if (kind == EstimatorKind::kRloo) {
        fill_advantages(batches[0]);
        assemble_gradient(policy, batches, acc);
      } else {
        naive_reinforce_gradient(policy, batches, acc);
      }
      for (std::size_t i = 0; i < dim; ++i) {
        sum[i] += acc[i];
        sumsq[i] += acc[i] * acc[i];
      }
    }
  });

  std::vector<double> total_sum(dim, 0.0), total_sumsq(dim, 0.0);
  for (long b = 0; b < num_blocks; ++b) {
    for (std::size_t i = 0; i < dim; ++i) {
      total_sum[i] += block_sum[static_cast<std::size_t>(b)][i];
      total_sumsq[i] += block_sumsq[static_cast<std::size_t>(b)][i];
    }
  }

  HarnessResult out;
  out.replicates = replicates;
  out.mean.resize(dim);
  out.stderr_mean.resize(dim);
  const double n = static_cast<double>(replicates);
  for (std::size_t i = 0; i < dim; ++i) {
    out.mean[i] = total_sum[i] / n;
    double var = std::max(0.0, total_sumsq[i] / n - out.mean[i] * out.mean[i]) * n / (n - 1.0);
    out.covariance_trace += var;
    out.stderr_mean[i] = std::sqrt(var / n);
  }
  return out;
}

}  // namespace latro
