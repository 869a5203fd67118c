#pragma once

#include <cstddef>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latro/policy.hpp"

namespace latro {

// One sampled rationale plus everything the estimator needs. `raw` is the
// sequence exactly as sampled (terminator kept when generation terminated);
// `rationale` is the usable prefix with the terminator cut off. Log-likelihoods
// and the score-function gradient are taken over `raw` so that the
// score-function identity E[grad log pi(z|x)] = 0 holds exactly; the answer is
// conditioned on query + usable prefix + ANS.
struct RolloutSample {
  Sequence raw;
  Sequence rationale;
  bool terminated = false;
  double logp_z_cur = 0.0;  // log pi_theta(z | x)
  double logp_z_ref = 0.0;  // log pi_0(z | x)
  double logp_y = 0.0;      // log pi_theta(y | x + z + ANS)
  double reward = 0.0;      // logp_y - beta*(logp_z_cur - logp_z_ref) - gamma*[truncated]
  double advantage = 0.0;   // filled by the estimator
};

struct RolloutConfig {
  int k = 16;
  std::size_t max_len = 1;  // L
  double temperature = 1.0;
  double beta_kl = 0.05;
  double gamma_trunc = 2.0;
};

struct RolloutBatch {
  const Example* example = nullptr;
  std::vector<RolloutSample> samples;
  RolloutConfig config;
};

struct GeneratedRationale {
  Sequence raw;
  Sequence rationale;
  bool terminated = false;
};

inline GeneratedRationale cut_rationale(const Vocabulary& vocab, Sequence raw) {
  RationaleEnd e = rationale_end(raw, vocab.ans(), vocab.eos());
  GeneratedRationale out;
  out.rationale.assign(raw.begin(), raw.begin() + static_cast<long>(e.end_index));
  out.terminated = e.terminated;
  out.raw = std::move(raw);
  // The stopping rule guarantees terminators never appear before the end.
  require(e.end_index + (e.terminated ? 1 : 0) == out.raw.size(),
          "rationale has an interior terminator");
  return out;
}

// K independent draws of z ~ pi(.|x) at temperature T, cut per rationale_end.
inline std::vector<GeneratedRationale> generate_rationales(const PolicyModel& policy,
                                                           const Example& example, int k,
                                                           std::size_t max_len, double temperature,
                                                           Rng& rng) {
  require(k >= 2, "generate_rationales requires K >= 2");
  std::vector<GeneratedRationale> out;
  out.reserve(static_cast<std::size_t>(k));
  for (Sequence& raw : sample(policy, example.query, k, max_len, temperature, rng)) {
    out.push_back(cut_rationale(policy.vocab(), std::move(raw)));
  }
  return out;
}

// Context the answer is scored against: x + usable rationale + ANS.
inline Sequence answer_context(const Vocabulary& vocab, const Sequence& query,
                               const Sequence& rationale) {
  Sequence ctx = concat(query, rationale);
  ctx.push_back(vocab.ans());
  return ctx;
}

// Fills the likelihood fields and the self-reward
//   r(z) = log pi_theta(y|x+z+ANS) - beta * log(pi_theta(z|x)/pi_0(z|x))
//          - gamma * [not terminated].
inline RolloutSample self_reward(const PolicyModel& policy_cur, const PolicyModel& policy_ref,
                                 const Example& example, GeneratedRationale gen, double beta_kl,
                                 double gamma_trunc) {
  require(beta_kl >= 0.0 && gamma_trunc >= 0.0, "beta and gamma must be nonnegative");
  RolloutSample s;
  s.raw = std::move(gen.raw);
  s.rationale = std::move(gen.rationale);
  s.terminated = gen.terminated;
  if (!s.raw.empty()) {
    s.logp_z_cur = logprob(policy_cur, example.query, s.raw).total;
    s.logp_z_ref = logprob(policy_ref, example.query, s.raw).total;
  }
  s.logp_y = logprob(policy_cur, answer_context(policy_cur.vocab(), example.query, s.rationale),
                     example.answer)
                 .total;
  s.reward = s.logp_y - beta_kl * (s.logp_z_cur - s.logp_z_ref) -
             (s.terminated ? 0.0 : gamma_trunc);
  return s;
}

inline RolloutBatch make_rollout_batch(const PolicyModel& policy_cur,
                                       const PolicyModel& policy_ref, const Example& example,
                                       const RolloutConfig& cfg, Rng& rng) {
  RolloutBatch batch;
  batch.example = &example;
  batch.config = cfg;
  batch.samples.reserve(static_cast<std::size_t>(cfg.k));
  for (GeneratedRationale& gen :
       generate_rationales(policy_cur, example, cfg.k, cfg.max_len, cfg.temperature, rng)) {
    batch.samples.push_back(
        self_reward(policy_cur, policy_ref, example, std::move(gen), cfg.beta_kl, cfg.gamma_trunc));
  }
  return batch;
}

// Negative log-likelihood of the answer with and without a rationale:
//   direct        = -log pi(y | x + ANS)
//   with rationale = -log pi(y | x + z + ANS)
struct NllComparison {
  double nll_direct = 0.0;
  double nll_with_rationale = 0.0;
};

inline NllComparison nll_direct_vs_rationale(const PolicyModel& policy, const Example& example,
                                             const Sequence& rationale) {
  NllComparison out;
  const Vocabulary& vocab = policy.vocab();
  out.nll_direct = -logprob(policy, answer_context(vocab, example.query, {}), example.answer).total;
  out.nll_with_rationale =
      -logprob(policy, answer_context(vocab, example.query, rationale), example.answer).total;
  return out;
}

inline void dump_rollouts_jsonl(const std::vector<RolloutBatch>& batches,
                                const std::vector<std::size_t>& example_indices,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot open rollout dump: " + path);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    for (std::size_t k = 0; k < batches[b].samples.size(); ++k) {
      const RolloutSample& s = batches[b].samples[k];
      nlohmann::json rec;
      rec["example"] = example_indices.at(b);
      rec["k"] = k;
      rec["rationale"] = s.rationale;
      rec["terminated"] = s.terminated;
      rec["logp_z_cur"] = s.logp_z_cur;
      rec["logp_z_ref"] = s.logp_z_ref;
      rec["logp_y"] = s.logp_y;
      rec["reward"] = s.reward;
      rec["advantage"] = s.advantage;
      out << rec.dump() << "\n";
    }
  }
}

}  // namespace latro
