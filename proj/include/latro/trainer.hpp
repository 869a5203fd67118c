#pragma once

#include <algorithm>
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
#include "latro/tasks.hpp"

namespace latro {

struct TrainerConfig {
  int k = 16;                       // MC sample size per example
  double beta_kl = 0.05;            // KL penalty coefficient
  double gamma_trunc = 2.0;         // truncation penalty
  double temperature = 1.0;
  std::size_t rationale_cap = 0;    // L; 0 derives the task-scaled default
  double learning_rate = 1e-2;      // desk-scale default
  std::string lr_schedule = "constant";  // constant | linear-decay
  std::string optimizer = "adaptive-moments";
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;
  int epochs = 5;
  std::size_t minibatch_size = 8;
  std::uint64_t seed = 0;
  long max_steps = 0;               // 0 = epoch-bounded; >0 stops after that many updates
  bool clip_gradients = false;
  double clip_norm = 1.0;
  int threads = 1;

  void validate() const {
    require(k >= 2, "K must be >= 2");
    require(temperature > 0.0, "T must be > 0");
    require(learning_rate > 0.0, "learning rate must be > 0");
    require(beta_kl >= 0.0 && gamma_trunc >= 0.0, "beta and gamma must be >= 0");
    require(epochs >= 0, "epochs must be >= 0");
    require(minibatch_size >= 1, "minibatch_size must be >= 1");
    require(lr_schedule == "constant" || lr_schedule == "linear-decay",
            "lr_schedule must be constant or linear-decay");
    optimizer_from_name(optimizer);
  }
};

enum class SftMode { kDirect, kWithRationale };

inline SftMode sft_mode_from_name(const std::string& name) {
  if (name == "direct") return SftMode::kDirect;
  if (name == "with-rationale") return SftMode::kWithRationale;
  throw ConfigError("unknown SFT mode '" + name + "'");
}

// Output channels. Everything is optional; metrics rows never contain
// wall-clock (timestamps belong to the caller's run log).
struct TrainSink {
  std::function<void(const nlohmann::json&)> on_metrics;
  std::function<void(int epoch, const PolicyModel& policy, bool is_best)> on_checkpoint;
  std::function<void(const std::string&)> on_log;
  std::function<void(const std::vector<RolloutBatch>&, const std::vector<std::size_t>&)>
      on_rollouts;  // per-minibatch rollout dump hook

  void metrics(const nlohmann::json& row) const {
    if (on_metrics) on_metrics(row);
  }
  void checkpoint(int epoch, const PolicyModel& policy, bool is_best) const {
    if (on_checkpoint) on_checkpoint(epoch, policy, is_best);
  }
  void log(const std::string& line) const {
    if (on_log) on_log(line);
  }
  void rollouts(const std::vector<RolloutBatch>& batches,
                const std::vector<std::size_t>& example_indices) const {
    if (on_rollouts) on_rollouts(batches, example_indices);
  }
};

struct ResumePoint {
  int epoch = 0;  // epochs already completed
  long step = 0;
  int best_epoch = 0;
  double best_accuracy = -1.0;
  std::vector<double> adam_m, adam_v;  // empty unless optimizer is adaptive-moments
  const PolicyModel* reference = nullptr;  // original pi_0 (latro resume only)
};

struct TrainResult {
  std::unique_ptr<PolicyModel> best;   // deep copy of the best-eval checkpoint
  int best_epoch = 0;
  double best_accuracy = 0.0;
  double initial_accuracy = 0.0;
  double final_accuracy = 0.0;
  long steps = 0;
  int epochs = 0;
  std::vector<nlohmann::json> metrics;
  std::vector<double> adam_m, adam_v;  // final optimizer moments, for resumable runs
};

// Mutable training state kept across epochs, exposed so runs can be resumed.
struct TrainState {
  Optimizer optimizer;
  int epoch = 0;
  long step = 0;
  int best_epoch = 0;
  double best_accuracy = -1.0;
  std::unique_ptr<PolicyModel> best;
  explicit TrainState(Optimizer opt) : optimizer(std::move(opt)) {}
};

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed_hash({seed, seed_domain::kShuffle, static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = rng.next_below(i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

inline double scheduled_lr(const TrainerConfig& cfg, long step, long total_steps) {
  if (cfg.lr_schedule == "constant" || total_steps <= 1) return cfg.learning_rate;
  double frac = static_cast<double>(step - 1) / static_cast<double>(total_steps);
  return cfg.learning_rate * std::max(0.0, 1.0 - frac);
}

inline Optimizer make_optimizer(const TrainerConfig& cfg, std::size_t dim) {
  return Optimizer(optimizer_from_name(cfg.optimizer), dim, cfg.adam_beta1, cfg.adam_beta2,
                   cfg.adam_epsilon, cfg.weight_decay);
}

}  // namespace detail

// Truncated-rationale fraction of a fresh rollout sweep at the given epoch
// tag, without touching parameters. Used to compare shaping pressure before
// and after training under identical measurement conditions.
inline double measure_truncated_fraction(const PolicyModel& policy, const Dataset& dataset,
                                         const TrainerConfig& cfg, std::size_t rationale_cap,
                                         int epoch_tag, int threads) {
  const std::size_t n = std::min<std::size_t>(dataset.examples.size(), 200);
  std::vector<double> fractions(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    long truncated = 0;
    for (int k = 0; k < cfg.k; ++k) {
      Rng rng(seed_hash({cfg.seed, seed_domain::kRollout, static_cast<std::uint64_t>(epoch_tag),
                         i, static_cast<std::uint64_t>(k)}));
      Sequence raw =
          sample_sequence(policy, dataset.examples[i].query, rationale_cap, cfg.temperature, rng,
                          {policy.vocab().eos(), policy.vocab().ans()});
      if (!cut_rationale(policy.vocab(), std::move(raw)).terminated) ++truncated;
    }
    fractions[i] = static_cast<double>(truncated) / static_cast<double>(cfg.k);
  });
  double sum = 0.0;
  for (double f : fractions) sum += f;
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// LaTRO training loop: per minibatch, sample K rationales per example, compute
// self-rewards and RLOO advantages, assemble the two-term gradient, take one
// ascent step. Per epoch, evaluate greedy accuracy and checkpoint; the best
// checkpoint (ties to the earlier epoch) is carried in the result.
// ---------------------------------------------------------------------------

inline TrainResult latro_train(PolicyModel& policy, const Dataset& train, const Dataset& eval_set,
                               const TrainerConfig& cfg, const TrainSink& sink = {},
                               const ResumePoint* resume = nullptr) {
  cfg.validate();
  train.validate();
  eval_set.validate();
  require(train.vocab == policy.vocab() && eval_set.vocab == policy.vocab(),
          "datasets and policy must share one vocabulary");

  const std::size_t cap =
      cfg.rationale_cap > 0 ? cfg.rationale_cap : tasks::default_rationale_cap(train);
  const DecodeLimits limits = decode_limits_for(eval_set, cap);
  // pi_0 is snapshotted once at initialization and never refreshed; a resumed
  // run must restore the original snapshot, not re-freeze the current policy.
  const std::unique_ptr<PolicyModel> reference =
      (resume && resume->reference) ? resume->reference->clone() : policy.clone();

  TrainState state(detail::make_optimizer(cfg, policy.params().size()));
  if (resume) {
    state.epoch = resume->epoch;
    state.step = resume->step;
    state.best_epoch = resume->best_epoch;
    state.best_accuracy = resume->best_accuracy;
    state.optimizer.set_step_count(resume->step);
    if (!resume->adam_m.empty()) {
      state.optimizer.first_moment() = resume->adam_m;
      state.optimizer.second_moment() = resume->adam_v;
    }
  }

  TrainResult result;
  const std::size_t n_train = train.examples.size();
  const long steps_per_epoch =
      static_cast<long>((n_train + cfg.minibatch_size - 1) / cfg.minibatch_size);
  const long planned_steps =
      cfg.max_steps > 0 ? cfg.max_steps : steps_per_epoch * static_cast<long>(cfg.epochs);

  auto run_eval = [&](int epoch) {
    AccuracyResult acc = greedy_accuracy(policy, eval_set, limits, cfg.threads);
    nlohmann::json row;
    row["kind"] = "epoch";
    row["epoch"] = epoch;
    row["step"] = state.step;
    row["eval_greedy_accuracy"] = acc.accuracy;
    row["eval_context_overflows"] = acc.context_overflows;
    bool is_best = acc.accuracy > state.best_accuracy;
    if (is_best) {
      state.best_accuracy = acc.accuracy;
      state.best_epoch = epoch;
      state.best = policy.clone();
    }
    row["best_so_far"] = state.best_accuracy;
    result.metrics.push_back(row);
    sink.metrics(row);
    sink.checkpoint(epoch, policy, is_best);
    return acc.accuracy;
  };

  if (!resume) {
    result.initial_accuracy = run_eval(0);
  } else {
    result.initial_accuracy = resume->best_accuracy;
  }

  GradientAccumulator total(policy.params().layout());
  bool stop = false;
  int epoch = state.epoch;
  auto keep_going = [&] {
    // A step budget overrides the epoch bound (fixed-step phases).
    return cfg.max_steps > 0 ? state.step < cfg.max_steps : epoch < cfg.epochs;
  };
  while (!stop && keep_going()) {
    ++epoch;
    std::vector<std::size_t> order = detail::epoch_order(n_train, cfg.seed, epoch);
    for (std::size_t begin = 0; begin < n_train && !stop; begin += cfg.minibatch_size) {
      const std::size_t end = std::min(n_train, begin + cfg.minibatch_size);
      const std::size_t batch_n = end - begin;

      std::vector<RolloutBatch> batches(batch_n);
      std::vector<GradientAccumulator> per_example(batch_n);
      parallel_for(batch_n, cfg.threads, [&](std::size_t bi) {
        const std::size_t ex_idx = order[begin + bi];
        const Example& ex = train.examples[ex_idx];
        RolloutBatch batch;
        batch.example = &ex;
        batch.config = {cfg.k, cap, cfg.temperature, cfg.beta_kl, cfg.gamma_trunc};
        for (int k = 0; k < cfg.k; ++k) {
          // per-sample seeding contract: hash(run_seed, epoch, example, sample)
          Rng rng(seed_hash({cfg.seed, seed_domain::kRollout, static_cast<std::uint64_t>(epoch),
                             ex_idx, static_cast<std::uint64_t>(k)}));
          Sequence raw = sample_sequence(policy, ex.query, cap, cfg.temperature, rng,
                                         {policy.vocab().eos(), policy.vocab().ans()});
          batch.samples.push_back(self_reward(policy, *reference, ex,
                                              cut_rationale(policy.vocab(), std::move(raw)),
                                              cfg.beta_kl, cfg.gamma_trunc));
        }
        fill_advantages(batch);
        per_example[bi] = GradientAccumulator(policy.params().layout());
        std::vector<RolloutBatch> single;
        single.push_back(std::move(batch));
        assemble_gradient(policy, single, per_example[bi]);  // normalized by 1/K
        batches[bi] = std::move(single[0]);
      });

      if (sink.on_rollouts) {
        std::vector<std::size_t> indices(order.begin() + static_cast<long>(begin),
                                         order.begin() + static_cast<long>(end));
        sink.rollouts(batches, indices);
      }

      total.reset();
      for (std::size_t bi = 0; bi < batch_n; ++bi) total.add(per_example[bi]);
      total.scale(1.0 / static_cast<double>(batch_n));  // now 1/(N*K) per sample

      if (!total.is_finite()) {
        nlohmann::json dump = nlohmann::json::array();
        for (std::size_t bi = 0; bi < batch_n; ++bi) {
          for (const RolloutSample& s : batches[bi].samples) {
            dump.push_back({{"example", order[begin + bi]},
                            {"rationale", s.rationale},
                            {"terminated", s.terminated},
                            {"logp_z_cur", s.logp_z_cur},
                            {"logp_z_ref", s.logp_z_ref},
                            {"logp_y", s.logp_y},
                            {"reward", s.reward},
                            {"advantage", s.advantage}});
          }
        }
        sink.log("non-finite gradient; offending batch: " + dump.dump());
        throw Error("latro_train: non-finite gradient at step " + std::to_string(state.step + 1));
      }
      if (cfg.clip_gradients) clip_global_norm(total, cfg.clip_norm);

      ++state.step;
      state.optimizer.step(policy.params(), total, detail::scheduled_lr(cfg, state.step, planned_steps));

      double mean_reward = 0.0, mean_abs_adv = 0.0, truncated = 0.0, mean_len = 0.0, kl = 0.0;
      long count = 0;
      for (const RolloutBatch& b : batches) {
        for (const RolloutSample& s : b.samples) {
          mean_reward += s.reward;
          mean_abs_adv += std::abs(s.advantage);
          truncated += s.terminated ? 0.0 : 1.0;
          mean_len += static_cast<double>(s.rationale.size());
          kl += s.logp_z_cur - s.logp_z_ref;
          ++count;
        }
      }
      nlohmann::json row;
      row["kind"] = "step";
      row["epoch"] = epoch;
      row["step"] = state.step;
      row["mean_reward"] = mean_reward / count;
      row["mean_abs_advantage"] = mean_abs_adv / count;
      row["truncated_fraction"] = truncated / count;
      row["mean_rationale_length"] = mean_len / count;
      row["kl_estimate"] = kl / count;
      result.metrics.push_back(row);
      sink.metrics(row);

      if (cfg.max_steps > 0 && state.step >= cfg.max_steps) stop = true;
    }
    result.final_accuracy = run_eval(epoch);
  }

  result.best = state.best ? state.best->clone() : policy.clone();
  result.best_epoch = state.best_epoch;
  result.best_accuracy = state.best_accuracy;
  result.steps = state.step;
  result.epochs = epoch;
  result.adam_m = state.optimizer.first_moment();
  result.adam_v = state.optimizer.second_moment();
  if (state.step == (resume ? resume->step : 0)) result.final_accuracy = result.initial_accuracy;
  return result;
}

// ---------------------------------------------------------------------------
// Supervised fine-tuning: plain likelihood ascent on the golden targets.
//   direct:         maximize log pi(y | x + ANS)
//   with-rationale: maximize log pi(z* + ANS + y | x)
// ---------------------------------------------------------------------------

inline TrainResult sft_train(PolicyModel& policy, const Dataset& train, const Dataset& eval_set,
                             const TrainerConfig& cfg, SftMode mode, const TrainSink& sink = {},
                             const ResumePoint* resume = nullptr) {
  cfg.validate();
  train.validate();
  eval_set.validate();
  require(train.vocab == policy.vocab() && eval_set.vocab == policy.vocab(),
          "datasets and policy must share one vocabulary");
  if (mode == SftMode::kWithRationale) {
    for (const Example& ex : train.examples) {
      require(ex.golden_rationale.has_value(), "with-rationale SFT requires golden rationales");
    }
  }

  const std::size_t cap =
      cfg.rationale_cap > 0 ? cfg.rationale_cap : tasks::default_rationale_cap(train);
  const DecodeLimits limits = decode_limits_for(eval_set, cap);

  TrainState state(detail::make_optimizer(cfg, policy.params().size()));
  if (resume) {
    state.epoch = resume->epoch;
    state.step = resume->step;
    state.best_epoch = resume->best_epoch;
    state.best_accuracy = resume->best_accuracy;
    state.optimizer.set_step_count(resume->step);
    if (!resume->adam_m.empty()) {
      state.optimizer.first_moment() = resume->adam_m;
      state.optimizer.second_moment() = resume->adam_v;
    }
  }

  TrainResult result;
  const std::size_t n_train = train.examples.size();
  const long steps_per_epoch =
      static_cast<long>((n_train + cfg.minibatch_size - 1) / cfg.minibatch_size);
  const long planned_steps =
      cfg.max_steps > 0 ? cfg.max_steps : steps_per_epoch * static_cast<long>(cfg.epochs);

  auto target_of = [&](const Example& ex) -> std::pair<Sequence, Sequence> {
    if (mode == SftMode::kDirect) {
      Sequence prefix = ex.query;
      prefix.push_back(policy.vocab().ans());
      return {std::move(prefix), ex.answer};
    }
    Sequence cont = *ex.golden_rationale;
    cont.push_back(policy.vocab().ans());
    cont.insert(cont.end(), ex.answer.begin(), ex.answer.end());
    return {ex.query, std::move(cont)};
  };

  auto run_eval = [&](int epoch) {
    AccuracyResult acc = greedy_accuracy(policy, eval_set, limits, cfg.threads);
    nlohmann::json row;
    row["kind"] = "epoch";
    row["epoch"] = epoch;
    row["step"] = state.step;
    row["eval_greedy_accuracy"] = acc.accuracy;
    row["eval_context_overflows"] = acc.context_overflows;
    bool is_best = acc.accuracy > state.best_accuracy;
    if (is_best) {
      state.best_accuracy = acc.accuracy;
      state.best_epoch = epoch;
      state.best = policy.clone();
    }
    row["best_so_far"] = state.best_accuracy;
    result.metrics.push_back(row);
    sink.metrics(row);
    sink.checkpoint(epoch, policy, is_best);
    return acc.accuracy;
  };

  if (!resume) {
    result.initial_accuracy = run_eval(0);
  } else {
    result.initial_accuracy = resume->best_accuracy;
  }

  GradientAccumulator total(policy.params().layout());
  bool stop = false;
  int epoch = state.epoch;
  auto keep_going = [&] {
    return cfg.max_steps > 0 ? state.step < cfg.max_steps : epoch < cfg.epochs;
  };
  while (!stop && keep_going()) {
    ++epoch;
    std::vector<std::size_t> order = detail::epoch_order(n_train, cfg.seed, epoch);
    for (std::size_t begin = 0; begin < n_train && !stop; begin += cfg.minibatch_size) {
      const std::size_t end = std::min(n_train, begin + cfg.minibatch_size);
      const std::size_t batch_n = end - begin;

      std::vector<GradientAccumulator> per_example(batch_n);
      std::vector<double> nll(batch_n, 0.0);
      std::vector<double> tokens(batch_n, 0.0);
      parallel_for(batch_n, cfg.threads, [&](std::size_t bi) {
        const Example& ex = train.examples[order[begin + bi]];
        auto [prefix, target] = target_of(ex);
        per_example[bi] = GradientAccumulator(policy.params().layout());
        policy.grad_logprob(prefix, target, per_example[bi], 1.0);
        nll[bi] = -logprob(policy, prefix, target).total;
        tokens[bi] = static_cast<double>(target.size());
      });

      total.reset();
      for (std::size_t bi = 0; bi < batch_n; ++bi) total.add(per_example[bi]);
      total.scale(1.0 / static_cast<double>(batch_n));
      if (!total.is_finite()) {
        throw Error("sft_train: non-finite gradient at step " + std::to_string(state.step + 1));
      }
      if (cfg.clip_gradients) clip_global_norm(total, cfg.clip_norm);

      ++state.step;
      state.optimizer.step(policy.params(), total, detail::scheduled_lr(cfg, state.step, planned_steps));

      double nll_sum = 0.0, tok_sum = 0.0;
      for (std::size_t bi = 0; bi < batch_n; ++bi) {
        nll_sum += nll[bi];
        tok_sum += tokens[bi];
      }
      nlohmann::json row;
      row["kind"] = "step";
      row["epoch"] = epoch;
      row["step"] = state.step;
      row["sft_nll"] = nll_sum / static_cast<double>(batch_n);
      row["sft_nll_per_token"] = nll_sum / tok_sum;
      result.metrics.push_back(row);
      sink.metrics(row);

      if (cfg.max_steps > 0 && state.step >= cfg.max_steps) stop = true;
    }
    result.final_accuracy = run_eval(epoch);
  }

  result.best = state.best ? state.best->clone() : policy.clone();
  result.best_epoch = state.best_epoch;
  result.best_accuracy = state.best_accuracy;
  result.steps = state.step;
  result.epochs = epoch;
  result.adam_m = state.optimizer.first_moment();
  result.adam_v = state.optimizer.second_moment();
  if (state.step == (resume ? resume->step : 0)) result.final_accuracy = result.initial_accuracy;
  return result;
}

}  // namespace latro
