#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "latro/estimator.hpp"
#include "latro/parallel.hpp"
#include "latro/rollout.hpp"

namespace latro {

struct DecodeLimits {
  std::size_t rationale_cap = 1;  // L at inference time
  std::size_t answer_cap = 3;     // max golden answer length + 2
};

// Answer decoding cap: longest stored answer plus two tokens of slack, so
// untrained checkpoints cannot loop unboundedly.
inline DecodeLimits decode_limits_for(const Dataset& ds, std::size_t rationale_cap) {
  return {rationale_cap, ds.max_answer_length() + 2};
}

// Greedy rationale (argmax, stops at EOS/ANS or the cap; cap 0 forces the
// empty rationale) followed by a greedy answer from x + z + ANS.
inline Sequence greedy_rationale(const PolicyModel& policy, const Sequence& query,
                                 std::size_t cap) {
  if (cap == 0) return {};
  Rng unused(0);
  Sequence raw = sample_sequence(policy, query, cap, 0.0, unused,
                                 {policy.vocab().eos(), policy.vocab().ans()});
  return cut_rationale(policy.vocab(), std::move(raw)).rationale;
}

inline Sequence greedy_answer(const PolicyModel& policy, const Sequence& context,
                              std::size_t cap) {
  Rng unused(0);
  return sample_sequence(policy, context, cap, 0.0, unused, {policy.vocab().eos()});
}

struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t context_overflows = 0;  // scored as incorrect, not fatal
};

inline AccuracyResult greedy_accuracy(const PolicyModel& policy, const Dataset& dataset,
                                      const DecodeLimits& limits, int threads = 1) {
  dataset.validate();
  const std::size_t n = dataset.examples.size();
  std::vector<char> correct(n, 0), overflow(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    const Example& ex = dataset.examples[i];
    try {
      Sequence z = greedy_rationale(policy, ex.query, limits.rationale_cap);
      Sequence ctx = answer_context(policy.vocab(), ex.query, z);
      Sequence pred = greedy_answer(policy, ctx, limits.answer_cap);
      correct[i] = answers_equal(pred, ex.answer, policy.vocab().eos()) ? 1 : 0;
    } catch (const ContextOverflowError&) {
      overflow[i] = 1;
    }
  });
  AccuracyResult out;
  out.total = n;
  for (std::size_t i = 0; i < n; ++i) {
    out.correct += correct[i];
    out.context_overflows += overflow[i];
  }
  out.accuracy = static_cast<double>(out.correct) / static_cast<double>(n);
  return out;
}

// One temperature-T draw of (rationale, answer) for an example.
inline Sequence sample_prediction(const PolicyModel& policy, const Example& ex,
                                  const DecodeLimits& limits, double temperature, Rng& rng) {
  Sequence raw = sample_sequence(policy, ex.query, limits.rationale_cap, temperature, rng,
                                 {policy.vocab().eos(), policy.vocab().ans()});
  Sequence z = cut_rationale(policy.vocab(), std::move(raw)).rationale;
  Sequence ctx = answer_context(policy.vocab(), ex.query, z);
  return sample_sequence(policy, ctx, limits.answer_cap, temperature, rng,
                         {policy.vocab().eos()});
}

// Majority vote over stripped answers; ties go to the earliest-sampled among
// the tied answers.
inline Sequence majority_vote(const std::vector<Sequence>& predictions, TokenId eos) {
  struct Entry {
    int count = 0;
    std::size_t first_index = 0;
  };
  std::map<Sequence, Entry> votes;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    Sequence key = strip_trailing_eos(predictions[i], eos);
    auto [it, inserted] = votes.try_emplace(std::move(key), Entry{0, i});
    ++it->second.count;
  }
  const Sequence* best = nullptr;
  Entry best_entry;
  for (const auto& [key, entry] : votes) {
    if (!best || entry.count > best_entry.count ||
        (entry.count == best_entry.count && entry.first_index < best_entry.first_index)) {
      best = &key;
      best_entry = entry;
    }
  }
  return *best;
}

inline AccuracyResult maj_at_k(const PolicyModel& policy, const Dataset& dataset, int k,
                               const DecodeLimits& limits, double temperature, std::uint64_t seed,
                               int threads = 1) {
  require(k >= 1, "maj@k requires k >= 1");
  const std::size_t n = dataset.examples.size();
  std::vector<char> correct(n, 0), overflow(n, 0);
  parallel_for(n, threads, [&](std::size_t i) {
    const Example& ex = dataset.examples[i];
    try {
      std::vector<Sequence> preds;
      preds.reserve(static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j) {
        Rng rng(seed_hash({seed, seed_domain::kEval, i, static_cast<std::uint64_t>(j)}));
        preds.push_back(sample_prediction(policy, ex, limits, temperature, rng));
      }
      Sequence winner = majority_vote(preds, policy.vocab().eos());
      correct[i] = answers_equal(winner, ex.answer, policy.vocab().eos()) ? 1 : 0;
    } catch (const ContextOverflowError&) {
      overflow[i] = 1;
    }
  });
  AccuracyResult out;
  out.total = n;
  for (std::size_t i = 0; i < n; ++i) {
    out.correct += correct[i];
    out.context_overflows += overflow[i];
  }
  out.accuracy = static_cast<double>(out.correct) / static_cast<double>(n);
  return out;
}

// ---------------------------------------------------------------------------
// Exact marginal answer distribution p_M(y|x) = E_{z~pi(.|x)}[ pi(y|x+z+ANS) ],
// by enumeration over rationales and answers. Keys are stripped answers.
// ---------------------------------------------------------------------------

inline std::map<Sequence, double> p_m_exact(const PolicyModel& policy, const Sequence& query,
                                            const DecodeLimits& limits) {
  std::map<Sequence, double> marginal;
  for (const EnumeratedSequence& ez : enumerate_rationales(policy, query, limits.rationale_cap)) {
    GeneratedRationale gen = cut_rationale(policy.vocab(), ez.tokens);
    Sequence ctx = answer_context(policy.vocab(), query, gen.rationale);
    for (const EnumeratedSequence& ey :
         enumerate_sequences(policy, ctx, limits.answer_cap, {policy.vocab().eos()})) {
      marginal[strip_trailing_eos(ey.tokens, policy.vocab().eos())] +=
          ez.probability * ey.probability;
    }
  }
  return marginal;
}

// Highest-mass answers, mass-descending with lexicographic tie order.
inline std::vector<std::pair<Sequence, double>> top_answers(
    const std::map<Sequence, double>& marginal, std::size_t count) {
  std::vector<std::pair<Sequence, double>> all(marginal.begin(), marginal.end());
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (all.size() > count) all.resize(count);
  return all;
}

// ---------------------------------------------------------------------------
// Majority-vote frequency convergence: empirical answer frequencies from K
// (z, y) draws against the enumerated p_M.
// ---------------------------------------------------------------------------

struct VoteFrequencyRow {
  long draws = 0;                      // K
  std::vector<double> abs_deviation;   // |F_hat - p_M| per tracked answer, reseed-averaged
  std::vector<double> bound;           // 4 sqrt(p_M (1-p_M) / K) per tracked answer
  double mean_abs_deviation = 0.0;
  bool within_bound = true;
};

inline std::vector<VoteFrequencyRow> vote_frequency_convergence(const PolicyModel& policy, const Example& example,
                                               const DecodeLimits& limits,
                                               const std::vector<long>& k_list, int reseeds,
                                               std::uint64_t seed, int threads = 1) {
  std::map<Sequence, double> marginal = p_m_exact(policy, example.query, limits);
  std::vector<std::pair<Sequence, double>> tracked = top_answers(marginal, 3);
  require(!tracked.empty(), "empty answer distribution");

  std::vector<VoteFrequencyRow> rows;
  for (long draws : k_list) {
    VoteFrequencyRow row;
    row.draws = draws;
    row.abs_deviation.assign(tracked.size(), 0.0);
    std::vector<std::vector<double>> per_seed(static_cast<std::size_t>(reseeds));
    parallel_for(static_cast<std::size_t>(reseeds), threads, [&](std::size_t rs) {
      std::vector<long> counts(tracked.size(), 0);
      for (long j = 0; j < draws; ++j) {
        Rng rng(seed_hash({seed, seed_domain::kEval, static_cast<std::uint64_t>(draws),
                           static_cast<std::uint64_t>(rs), static_cast<std::uint64_t>(j)}));
        Sequence pred = strip_trailing_eos(
            sample_prediction(policy, example, limits, 1.0, rng), policy.vocab().eos());
        for (std::size_t a = 0; a < tracked.size(); ++a) {
          if (pred == tracked[a].first) ++counts[a];
        }
      }
      std::vector<double> dev(tracked.size());
      for (std::size_t a = 0; a < tracked.size(); ++a) {
        double freq = static_cast<double>(counts[a]) / static_cast<double>(draws);
        dev[a] = std::abs(freq - tracked[a].second);
      }
      per_seed[rs] = std::move(dev);
    });
    for (int rs = 0; rs < reseeds; ++rs) {
      for (std::size_t a = 0; a < tracked.size(); ++a) {
        row.abs_deviation[a] += per_seed[static_cast<std::size_t>(rs)][a] / reseeds;
      }
    }
    row.bound.resize(tracked.size());
    for (std::size_t a = 0; a < tracked.size(); ++a) {
      double p = tracked[a].second;
      row.bound[a] = 4.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(draws));
      row.mean_abs_deviation += row.abs_deviation[a] / static_cast<double>(tracked.size());
      if (row.abs_deviation[a] > row.bound[a]) row.within_bound = false;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Exact majority-vote win probability for one answer among k i.i.d. draws from
// a finite answer distribution, ties resolved uniformly over the tied set
// (the distribution of "earliest-sampled among tied" under exchangeability).
// Multinomial enumeration; guarded.
// ---------------------------------------------------------------------------

inline double vote_win_prob_exact(const std::vector<double>& probs, int k,
                                  std::size_t target_index) {
  const std::size_t m = probs.size();
  require(m >= 1 && target_index < m, "bad vote distribution");
  require(m <= 8 && k <= 32, "vote enumeration guard: too many answers or draws");

  std::vector<double> log_fact(static_cast<std::size_t>(k) + 1, 0.0);
  for (int i = 2; i <= k; ++i) {
    log_fact[static_cast<std::size_t>(i)] =
        log_fact[static_cast<std::size_t>(i - 1)] + std::log(static_cast<double>(i));
  }

  double win = 0.0;
  std::vector<int> counts(m, 0);
  auto recurse = [&](auto&& self, std::size_t idx, int remaining) -> void {
    if (idx + 1 == m) {
      counts[idx] = remaining;
      int best = 0;
      for (int c : counts) best = std::max(best, c);
      int ties = 0;
      for (int c : counts) ties += (c == best);
      if (counts[target_index] == best) {
        double log_mass = log_fact[static_cast<std::size_t>(k)];
        bool possible = true;
        for (std::size_t a = 0; a < m; ++a) {
          if (counts[a] > 0 && probs[a] <= 0.0) {
            possible = false;
            break;
          }
          log_mass -= log_fact[static_cast<std::size_t>(counts[a])];
          if (counts[a] > 0) log_mass += counts[a] * std::log(probs[a]);
        }
        if (possible) win += std::exp(log_mass) / ties;
      }
      return;
    }
    for (int c = 0; c <= remaining; ++c) {
      counts[idx] = c;
      self(self, idx + 1, remaining - c);
    }
  };
  recurse(recurse, 0, k);
  return win;
}

// ---------------------------------------------------------------------------
// Fig. 1-style NLL comparison: answer NLL with and without a rationale,
// averaged over the dataset, with paired-difference statistics.
// ---------------------------------------------------------------------------

enum class RationaleSource { kGolden, kSampled };

struct NllReport {
  double mean_nll_direct = 0.0;
  double mean_nll_with_rationale = 0.0;
  double mean_paired_diff = 0.0;    // direct - with_rationale
  double stderr_paired_diff = 0.0;
  std::size_t count = 0;
};

inline NllReport nll_comparison(const PolicyModel& policy, const Dataset& dataset,
                                RationaleSource source, std::size_t rationale_cap,
                                double temperature, std::uint64_t seed, int threads = 1) {
  const std::size_t n = dataset.examples.size();
  std::vector<double> direct(n, 0.0), with_r(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    const Example& ex = dataset.examples[i];
    Sequence z;
    if (source == RationaleSource::kGolden) {
      require(ex.golden_rationale.has_value(), "golden rationale missing for NLL comparison");
      z = *ex.golden_rationale;
    } else {
      Rng rng(seed_hash({seed, seed_domain::kEval, i}));
      Sequence raw = sample_sequence(policy, ex.query, rationale_cap, temperature, rng,
                                     {policy.vocab().eos(), policy.vocab().ans()});
      z = cut_rationale(policy.vocab(), std::move(raw)).rationale;
    }
    NllComparison c = nll_direct_vs_rationale(policy, ex, z);
    direct[i] = c.nll_direct;
    with_r[i] = c.nll_with_rationale;
  });

  NllReport out;
  out.count = n;
  double diff_sum = 0.0, diff_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.mean_nll_direct += direct[i] / n;
    out.mean_nll_with_rationale += with_r[i] / n;
    double d = direct[i] - with_r[i];
    diff_sum += d;
    diff_sq += d * d;
  }
  out.mean_paired_diff = diff_sum / n;
  double var = std::max(0.0, diff_sq / n - out.mean_paired_diff * out.mean_paired_diff) * n /
               (n > 1 ? (n - 1.0) : 1.0);
  out.stderr_paired_diff = std::sqrt(var / n);
  return out;
}

// ---------------------------------------------------------------------------
// Ablation sweeps.
// ---------------------------------------------------------------------------

struct SweepPoint {
  std::string checkpoint;
  double sweep_value = 0.0;  // L or k
  double accuracy = 0.0;
  double half_width = 0.0;   // sqrt(a(1-a)/N)
  std::size_t n = 0;
};

inline std::vector<SweepPoint> ablate_length(
    const std::vector<std::pair<std::string, const PolicyModel*>>& checkpoints,
    const Dataset& dataset, const std::vector<std::size_t>& l_list, int threads = 1) {
  std::vector<SweepPoint> out;
  for (const auto& [name, policy] : checkpoints) {
    for (std::size_t cap : l_list) {
      AccuracyResult acc = greedy_accuracy(*policy, dataset, decode_limits_for(dataset, cap),
                                           threads);
      double a = acc.accuracy;
      out.push_back({name, static_cast<double>(cap), a,
                     std::sqrt(a * (1.0 - a) / static_cast<double>(acc.total)), acc.total});
    }
  }
  return out;
}

inline std::vector<SweepPoint> ablate_majk(const PolicyModel& policy, const Dataset& dataset,
                                           const std::vector<int>& k_list, std::size_t rationale_cap,
                                           double temperature, std::uint64_t seed,
                                           int threads = 1) {
  std::vector<SweepPoint> out;
  DecodeLimits limits = decode_limits_for(dataset, rationale_cap);
  for (int k : k_list) {
    AccuracyResult acc = maj_at_k(policy, dataset, k, limits, temperature, seed, threads);
    double a = acc.accuracy;
    out.push_back({"", static_cast<double>(k), a,
                   std::sqrt(a * (1.0 - a) / static_cast<double>(acc.total)), acc.total});
  }
  return out;
}

// ---------------------------------------------------------------------------
// EvalReport serialization.
// ---------------------------------------------------------------------------

struct EvalReport {
  std::string task;
  std::string checkpoint_id;
  double greedy_acc = 0.0;
  std::vector<std::pair<int, double>> maj_accuracy;  // ascending k
  double mean_nll_direct = 0.0;
  double mean_nll_with_rationale = 0.0;
  double mean_rationale_length = 0.0;
  double truncated_fraction = 0.0;
  nlohmann::json to_json() const {
    nlohmann::json j;
    j["task"] = task;
    j["checkpoint"] = checkpoint_id;
    j["greedy_accuracy"] = greedy_acc;
    nlohmann::json maj = nlohmann::json::array();  // [[k, accuracy], ...], k ascending
    for (const auto& [k, a] : maj_accuracy) maj.push_back({k, a});
    j["maj_at_k"] = maj;
    j["mean_nll_direct"] = mean_nll_direct;
    j["mean_nll_with_rationale"] = mean_nll_with_rationale;
    j["mean_rationale_length"] = mean_rationale_length;
    j["truncated_fraction"] = truncated_fraction;
    return j;
  }
};

}  // namespace latro
