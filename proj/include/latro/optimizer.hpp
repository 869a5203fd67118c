#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "latro/params.hpp"

namespace latro {

enum class OptimizerKind { kSgd, kAdaptiveMoments };

inline std::string optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adaptive-moments";
}

inline OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adaptive-moments") return OptimizerKind::kAdaptiveMoments;
  throw ConfigError("unknown optimizer '" + name + "'");
}

// Ascent-direction optimizer. adaptive-moments is the standard bias-corrected
// first/second moment update with optional decoupled weight decay.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::size_t dim, double beta1 = 0.9, double beta2 = 0.999,
            double epsilon = 1e-8, double weight_decay = 0.0)
      : kind_(kind), beta1_(beta1), beta2_(beta2), epsilon_(epsilon),
        weight_decay_(weight_decay) {
    if (kind_ == OptimizerKind::kAdaptiveMoments) {
      m_.assign(dim, 0.0);
      v_.assign(dim, 0.0);
    }
  }

  long step_count() const { return t_; }
  std::vector<double>& first_moment() { return m_; }
  std::vector<double>& second_moment() { return v_; }
  void set_step_count(long t) { t_ = t; }

  void step(ParameterVector& theta, const GradientAccumulator& grad, double lr) {
    require(grad.layout() == theta.layout(), "optimizer: gradient layout mismatch");
    require(grad.is_finite(), "optimizer: non-finite gradient");
    ++t_;
    const std::size_t n = theta.size();
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t i = 0; i < n; ++i) theta[i] += lr * grad[i];
    } else {
      const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
      for (std::size_t i = 0; i < n; ++i) {
        m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
        v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
        const double mhat = m_[i] / bc1;
        const double vhat = v_[i] / bc2;
        theta[i] += lr * mhat / (std::sqrt(vhat) + epsilon_);
      }
    }
    if (weight_decay_ != 0.0) {
      for (std::size_t i = 0; i < n; ++i) theta[i] -= lr * weight_decay_ * theta[i];
    }
  }

 private:
  OptimizerKind kind_;
  double beta1_, beta2_, epsilon_, weight_decay_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Optional global-norm clipping (off by default; the analyzed estimator is
// unclipped).
inline double clip_global_norm(GradientAccumulator& grad, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) sq += grad[i] * grad[i];
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) grad.scale(max_norm / norm);
  return norm;
}

}  // namespace latro
