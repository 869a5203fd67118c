#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "latro/policy.hpp"

namespace latro {

// Fully tabular m-gram policy: one logit row per length-m context (contexts
// shorter than m are left-padded with BOS). Every distribution is an explicit
// softmax over a parameter row, which is what makes exact enumeration and
// analytic gradients possible. Verification vehicle, not a capacity play.
class TabularPolicy final : public PolicyModel {
 public:
  TabularPolicy(Vocabulary vocab, int context_order, std::size_t max_context = 4096)
      : vocab_(std::move(vocab)), order_(context_order), max_context_(max_context) {
    require(order_ >= 1 && order_ <= 3, "tabular context order must be in [1,3]");
    std::size_t v = static_cast<std::size_t>(vocab_.size());
    rows_ = 1;
    for (int i = 0; i < order_; ++i) rows_ *= v;
    params_ = ParameterVector(Layout({{"logits", 0, rows_ * v}}));
  }

  const Vocabulary& vocab() const override { return vocab_; }
  std::size_t max_context() const override { return max_context_; }
  const ParameterVector& params() const override { return params_; }
  ParameterVector& params() override { return params_; }
  std::string model_class() const override { return "tabular"; }
  int context_order() const { return order_; }

  std::size_t context_row(const Sequence& prefix) const {
    std::size_t v = static_cast<std::size_t>(vocab_.size());
    std::size_t row = 0;
    for (int i = order_; i >= 1; --i) {
      std::size_t pos_back = static_cast<std::size_t>(i);
      TokenId t = pos_back <= prefix.size() ? prefix[prefix.size() - pos_back] : vocab_.bos();
      row = row * v + static_cast<std::size_t>(t);
    }
    return row;
  }

  std::vector<double> next_logits(const Sequence& prefix) const override {
    std::size_t v = static_cast<std::size_t>(vocab_.size());
    const double* row = params_.data() + context_row(prefix) * v;
    return std::vector<double>(row, row + v);
  }

  double* logits_row(const Sequence& context_tokens) {
    return params_.data() + context_row(context_tokens) * static_cast<std::size_t>(vocab_.size());
  }

  // Analytic per-context softmax gradient: for each visited context row,
  // scale * (one_hot(target) - p(.|context)); zero elsewhere.
  void grad_logprob(const Sequence& prefix, const Sequence& continuation,
                    GradientAccumulator& acc, double scale) const override {
    require(!continuation.empty(), "grad_logprob requires a nonempty continuation");
    require(acc.layout() == params_.layout(), "accumulator layout mismatch");
    check_context(prefix.size() + continuation.size());

    std::size_t v = static_cast<std::size_t>(vocab_.size());
    Sequence ctx = prefix;
    for (TokenId t : continuation) {
      std::size_t row = context_row(ctx);
      std::vector<double> p = softmax(next_logits(ctx));
      double* g = acc.data() + row * v;
      for (std::size_t j = 0; j < v; ++j) g[j] -= scale * p[j];
      g[static_cast<std::size_t>(t)] += scale;
      ctx.push_back(t);
    }
    acc.note_contribution();
  }

  std::unique_ptr<PolicyModel> clone() const override {
    return std::make_unique<TabularPolicy>(*this);
  }

 private:
  Vocabulary vocab_;
  int order_;
  std::size_t max_context_;
  std::size_t rows_ = 0;
  ParameterVector params_;
};

}  // namespace latro
