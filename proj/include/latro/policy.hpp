#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "latro/common.hpp"
#include "latro/params.hpp"
#include "latro/rng.hpp"
#include "latro/sequence.hpp"

namespace latro {

struct LogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

inline std::vector<double> softmax(const std::vector<double>& logits) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : logits) m = std::max(m, x);
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

// log softmax(logits)[target], stable.
inline double log_softmax_at(const std::vector<double>& logits, TokenId target) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : logits) m = std::max(m, x);
  double z = 0.0;
  for (double x : logits) z += std::exp(x - m);
  return logits[static_cast<std::size_t>(target)] - m - std::log(z);
}

// Autoregressive categorical model over tokens. Implementations expose raw
// next-token logits plus reverse-mode gradients of sequence log-probabilities
// with respect to one flat parameter vector. Policies are read-shareable;
// parameter mutation must not overlap any read.
class PolicyModel {
 public:
  virtual ~PolicyModel() = default;

  virtual const Vocabulary& vocab() const = 0;
  virtual std::size_t max_context() const = 0;
  virtual const ParameterVector& params() const = 0;
  virtual ParameterVector& params() = 0;
  virtual std::string model_class() const = 0;

  // Logits for the distribution of the token following `prefix`.
  virtual std::vector<double> next_logits(const Sequence& prefix) const = 0;

  // Per-token log-probabilities of `continuation` after `prefix`. The default
  // walks next_logits position by position; models with a shared forward pass
  // override it.
  virtual LogProb sequence_logprob(const Sequence& prefix, const Sequence& continuation) const {
    LogProb out;
    out.per_token.reserve(continuation.size());
    Sequence ctx = prefix;
    ctx.reserve(prefix.size() + continuation.size());
    for (TokenId t : continuation) {
      double lp = log_softmax_at(next_logits(ctx), t);
      out.per_token.push_back(lp);
      out.total += lp;
      ctx.push_back(t);
    }
    return out;
  }

  // Adds scale * d(log softmax(next_logits(prefix))[target]) / dtheta for each
  // (prefix-length, target) pair of the continuation, i.e. the gradient of the
  // full continuation log-probability. Implementations may (and do) share one
  // backward pass across all positions.
  virtual void grad_logprob(const Sequence& prefix, const Sequence& continuation,
                            GradientAccumulator& acc, double scale) const = 0;

  virtual std::unique_ptr<PolicyModel> clone() const = 0;

  void check_context(std::size_t needed) const {
    if (needed > max_context()) {
      throw ContextOverflowError("context overflow: need " + std::to_string(needed) +
                                 " positions, max_context=" + std::to_string(max_context()));
    }
  }
};

// ---------------------------------------------------------------------------
// Shared operations defined on the PolicyModel interface.
// ---------------------------------------------------------------------------

// Exact log-probability of `continuation` after `prefix`, factored per token.
inline LogProb logprob(const PolicyModel& policy, const Sequence& prefix,
                       const Sequence& continuation) {
  require(!continuation.empty(), "logprob requires a nonempty continuation");
  policy.check_context(prefix.size() + continuation.size());
  return policy.sequence_logprob(prefix, continuation);
}

// One draw from softmax(logits / T); T == 0 selects argmax with ties broken by
// lowest token id (greedy mode ignores T entirely).
inline TokenId sample_token(const std::vector<double>& logits, double temperature, Rng* rng) {
  if (temperature == 0.0) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i) {
      if (logits[i] > logits[best]) best = i;
    }
    return static_cast<TokenId>(best);
  }
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / temperature;
  std::vector<double> p = softmax(scaled);
  double u = rng->next_double();
  double cum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(p.size() - 1);
}

// Token-by-token generation, stopping at any token in `stop_tokens` (the
// terminator is kept in the output) or after max_new_tokens.
inline Sequence sample_sequence(const PolicyModel& policy, const Sequence& prefix,
                                std::size_t max_new_tokens, double temperature, Rng& rng,
                                const std::vector<TokenId>& stop_tokens) {
  require(max_new_tokens >= 1, "sample requires L >= 1");
  Sequence ctx = prefix;
  Sequence out;
  for (std::size_t step = 0; step < max_new_tokens; ++step) {
    policy.check_context(ctx.size() + 1);
    std::vector<double> logits = policy.next_logits(ctx);
    TokenId t = sample_token(logits, temperature, &rng);
    out.push_back(t);
    ctx.push_back(t);
    if (std::find(stop_tokens.begin(), stop_tokens.end(), t) != stop_tokens.end()) break;
  }
  return out;
}

// K mutually independent draws given the generator state.
inline std::vector<Sequence> sample(const PolicyModel& policy, const Sequence& prefix,
                                    int k, std::size_t max_new_tokens, double temperature,
                                    Rng& rng) {
  require(k >= 1, "sample requires K >= 1");
  std::vector<TokenId> stops = {policy.vocab().eos(), policy.vocab().ans()};
  std::vector<Sequence> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    out.push_back(sample_sequence(policy, prefix, max_new_tokens, temperature, rng, stops));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration of the generation process: every continuation that
// either ends in a stop token (kept, mass includes it) or reaches length L
// unterminated, with its exact probability. Masses sum to 1. Oracle support;
// guarded by V^L <= 1e6.
// ---------------------------------------------------------------------------

struct EnumeratedSequence {
  Sequence tokens;   // raw, terminator included when present
  double probability = 0.0;
};

inline void check_enumeration_guard(TokenId vocab_size, std::size_t max_len) {
  double combos = std::pow(static_cast<double>(vocab_size), static_cast<double>(max_len));
  if (combos > 1e6) {
    throw Error("enumeration guard: V^L = " + std::to_string(combos) + " exceeds 1e6");
  }
}

inline std::vector<EnumeratedSequence> enumerate_sequences(
    const PolicyModel& policy, const Sequence& prefix, std::size_t max_len,
    const std::vector<TokenId>& stop_tokens) {
  check_enumeration_guard(policy.vocab().size(), max_len);
  policy.check_context(prefix.size() + max_len);

  std::vector<EnumeratedSequence> out;
  Sequence ctx = prefix;
  Sequence partial;

  // Depth-first over the sampling tree in token-id order, so output order is
  // deterministic and independent of everything but the policy.
  auto recurse = [&](auto&& self, double mass) -> void {
    if (partial.size() == max_len) {
      out.push_back({partial, mass});
      return;
    }
    std::vector<double> p = softmax(policy.next_logits(ctx));
    for (TokenId t = 0; t < policy.vocab().size(); ++t) {
      double m = mass * p[static_cast<std::size_t>(t)];
      partial.push_back(t);
      ctx.push_back(t);
      if (std::find(stop_tokens.begin(), stop_tokens.end(), t) != stop_tokens.end()) {
        out.push_back({partial, m});
      } else {
        self(self, m);
      }
      partial.pop_back();
      ctx.pop_back();
    }
  };
  recurse(recurse, 1.0);
  return out;
}

inline std::vector<EnumeratedSequence> enumerate_rationales(const PolicyModel& policy,
                                                            const Sequence& prefix,
                                                            std::size_t max_len) {
  return enumerate_sequences(policy, prefix, max_len,
                             {policy.vocab().eos(), policy.vocab().ans()});
}

}  // namespace latro
