#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "latro/policy.hpp"

namespace latro {

// Single-block causal transformer, 64-bit floats, no normalization layers:
//   h0_t   = E[w_t] + P[t]
//   a_t    = h0_t + Wo * Attn(h0)_t          (single head, 1/sqrt(d) scaling)
//   h1_t   = a_t + W2 * tanh(W1 * a_t)
//   logits = Wout * h1_t
// The forward spec is frozen so the hand-written reverse pass below stays
// checkable against finite differences.
class TinyTransformer final : public PolicyModel {
 public:
  TinyTransformer(Vocabulary vocab, int embed_dim, int max_positions)
      : vocab_(std::move(vocab)), d_(embed_dim), max_pos_(max_positions) {
    require(d_ >= 1, "embed_dim must be positive");
    require(max_pos_ >= 1, "max_positions must be positive");
    std::size_t v = static_cast<std::size_t>(vocab_.size());
    std::size_t d = static_cast<std::size_t>(d_);
    std::size_t p = static_cast<std::size_t>(max_pos_);
    std::vector<Segment> segs;
    std::size_t off = 0;
    auto seg = [&](const char* name, std::size_t len) {
      segs.push_back({name, off, len});
      off += len;
    };
    seg("tok_embed", v * d);
    seg("pos_embed", p * d);
    seg("attn_wq", d * d);
    seg("attn_wk", d * d);
    seg("attn_wv", d * d);
    seg("attn_wo", d * d);
    seg("ff_w1", 4 * d * d);
    seg("ff_w2", d * 4 * d);
    seg("out_proj", v * d);
    params_ = ParameterVector(Layout(std::move(segs)));
  }

  // All segments i.i.d. normal with standard deviation 0.08.
  void init_parameters(Rng& rng, double stddev = 0.08) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      params_[i] = stddev * rng.next_gaussian();
    }
  }

  const Vocabulary& vocab() const override { return vocab_; }
  std::size_t max_context() const override { return static_cast<std::size_t>(max_pos_); }
  const ParameterVector& params() const override { return params_; }
  ParameterVector& params() override { return params_; }
  std::string model_class() const override { return "tiny_transformer"; }
  int embed_dim() const { return d_; }
  int max_positions() const { return max_pos_; }

  std::vector<double> next_logits(const Sequence& prefix) const override {
    check_context(prefix.size() + 1);
    const std::size_t n = prefix.size();
    require(n >= 1, "transformer needs at least one token of context");
    const std::size_t d = static_cast<std::size_t>(d_);

    // Keys/values for the whole prefix, query/FF/logits for the last position
    // only. No state is cached across calls.
    std::vector<double> h0(n * d), k(n * d), v(n * d);
    embed_rows(prefix, h0);
    const double* wk = params_.segment_data("attn_wk");
    const double* wv = params_.segment_data("attn_wv");
    for (std::size_t t = 0; t < n; ++t) {
      matvec(wk, &h0[t * d], &k[t * d], d, d);
      matvec(wv, &h0[t * d], &v[t * d], d, d);
    }

    std::size_t last = n - 1;
    std::vector<double> q(d);
    matvec(params_.segment_data("attn_wq"), &h0[last * d], q.data(), d, d);

    std::vector<double> scores(n);
    double scale = 1.0 / std::sqrt(static_cast<double>(d_));
    for (std::size_t s = 0; s <= last; ++s) {
      scores[s] = scale * dot(q.data(), &k[s * d], d);
    }
    std::vector<double> alpha = softmax(scores);

    std::vector<double> ctx(d, 0.0);
    for (std::size_t s = 0; s <= last; ++s) {
      axpy(alpha[s], &v[s * d], ctx.data(), d);
    }

    std::vector<double> a(d);
    matvec(params_.segment_data("attn_wo"), ctx.data(), a.data(), d, d);
    for (std::size_t i = 0; i < d; ++i) a[i] += h0[last * d + i];

    std::vector<double> g(4 * d);
    matvec(params_.segment_data("ff_w1"), a.data(), g.data(), 4 * d, d);
    for (double& x : g) x = std::tanh(x);
    std::vector<double> h1(d);
    matvec(params_.segment_data("ff_w2"), g.data(), h1.data(), d, 4 * d);
    for (std::size_t i = 0; i < d; ++i) h1[i] += a[i];

    std::vector<double> logits(static_cast<std::size_t>(vocab_.size()));
    matvec(params_.segment_data("out_proj"), h1.data(), logits.data(),
           static_cast<std::size_t>(vocab_.size()), d);
    return logits;
  }

  LogProb sequence_logprob(const Sequence& prefix, const Sequence& continuation) const override {
    require(!prefix.empty(), "transformer needs at least one token of context");
    check_context(prefix.size() + continuation.size());
    Forward fwd = forward_full(concat(prefix, continuation));
    LogProb out;
    out.per_token.reserve(continuation.size());
    const std::size_t v = static_cast<std::size_t>(vocab_.size());
    for (std::size_t i = 0; i < continuation.size(); ++i) {
      std::size_t pos = prefix.size() + i - 1;  // position predicting continuation[i]
      std::vector<double> logits(fwd.logits.begin() + pos * v, fwd.logits.begin() + (pos + 1) * v);
      double lp = log_softmax_at(logits, continuation[i]);
      out.per_token.push_back(lp);
      out.total += lp;
    }
    return out;
  }

  void grad_logprob(const Sequence& prefix, const Sequence& continuation,
                    GradientAccumulator& acc, double scale) const override {
    require(!continuation.empty(), "grad_logprob requires a nonempty continuation");
    require(!prefix.empty(), "transformer needs at least one token of context");
    require(acc.layout() == params_.layout(), "accumulator layout mismatch");
    check_context(prefix.size() + continuation.size());

    Sequence seq = concat(prefix, continuation);
    Forward fwd = forward_full(seq);
    backward(seq, prefix.size(), fwd, acc, scale);
    acc.note_contribution();
  }

  std::unique_ptr<PolicyModel> clone() const override {
    return std::make_unique<TinyTransformer>(*this);
  }

 private:
  struct Forward {
    std::size_t n = 0;
    std::vector<double> h0, q, k, v;  // n x d
    std::vector<double> alpha;        // n x n, row t holds weights over s<=t
    std::vector<double> ctx;          // n x d, attention output
    std::vector<double> a;            // n x d
    std::vector<double> g;            // n x 4d, tanh activations
    std::vector<double> h1;           // n x d
    std::vector<double> logits;       // n x V
  };

  static double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
  }

  static void axpy(double c, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += c * x[i];
  }

  // y = W x with W stored row-major as (rows x cols).
  static void matvec(const double* w, const double* x, double* y, std::size_t rows,
                     std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
      y[r] = dot(w + r * cols, x, cols);
    }
  }

  // y += W^T x, same storage.
  static void matvec_t_accum(const double* w, const double* x, double* y, std::size_t rows,
                             std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
      axpy(x[r], w + r * cols, y, cols);
    }
  }

  // W += outer(u, x): W[r][c] += u[r] * x[c].
  static void outer_accum(double* w, const double* u, const double* x, std::size_t rows,
                          std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
      axpy(u[r], x, w + r * cols, cols);
    }
  }

  void embed_rows(const Sequence& seq, std::vector<double>& h0) const {
    const std::size_t d = static_cast<std::size_t>(d_);
    const double* e = params_.segment_data("tok_embed");
    const double* p = params_.segment_data("pos_embed");
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const double* erow = e + static_cast<std::size_t>(seq[t]) * d;
      const double* prow = p + t * d;
      for (std::size_t i = 0; i < d; ++i) h0[t * d + i] = erow[i] + prow[i];
    }
  }

  Forward forward_full(const Sequence& seq) const {
    const std::size_t n = seq.size();
    const std::size_t d = static_cast<std::size_t>(d_);
    const std::size_t v = static_cast<std::size_t>(vocab_.size());
    Forward f;
    f.n = n;
    f.h0.resize(n * d);
    f.q.resize(n * d);
    f.k.resize(n * d);
    f.v.resize(n * d);
    f.alpha.assign(n * n, 0.0);
    f.ctx.assign(n * d, 0.0);
    f.a.resize(n * d);
    f.g.resize(n * 4 * d);
    f.h1.resize(n * d);
    f.logits.resize(n * v);

    embed_rows(seq, f.h0);
    const double* wq = params_.segment_data("attn_wq");
    const double* wk = params_.segment_data("attn_wk");
    const double* wv = params_.segment_data("attn_wv");
    for (std::size_t t = 0; t < n; ++t) {
      matvec(wq, &f.h0[t * d], &f.q[t * d], d, d);
      matvec(wk, &f.h0[t * d], &f.k[t * d], d, d);
      matvec(wv, &f.h0[t * d], &f.v[t * d], d, d);
    }

    const double scale = 1.0 / std::sqrt(static_cast<double>(d_));
    std::vector<double> scores;
    for (std::size_t t = 0; t < n; ++t) {
      scores.assign(t + 1, 0.0);
      for (std::size_t s = 0; s <= t; ++s) {
        scores[s] = scale * dot(&f.q[t * d], &f.k[s * d], d);
      }
      std::vector<double> al = softmax(scores);
      for (std::size_t s = 0; s <= t; ++s) {
        f.alpha[t * n + s] = al[s];
        axpy(al[s], &f.v[s * d], &f.ctx[t * d], d);
      }
    }

    const double* wo = params_.segment_data("attn_wo");
    const double* w1 = params_.segment_data("ff_w1");
    const double* w2 = params_.segment_data("ff_w2");
    const double* wout = params_.segment_data("out_proj");
    for (std::size_t t = 0; t < n; ++t) {
      matvec(wo, &f.ctx[t * d], &f.a[t * d], d, d);
      for (std::size_t i = 0; i < d; ++i) f.a[t * d + i] += f.h0[t * d + i];
      matvec(w1, &f.a[t * d], &f.g[t * 4 * d], 4 * d, d);
      for (std::size_t i = 0; i < 4 * d; ++i) f.g[t * 4 * d + i] = std::tanh(f.g[t * 4 * d + i]);
      matvec(w2, &f.g[t * 4 * d], &f.h1[t * d], d, 4 * d);
      for (std::size_t i = 0; i < d; ++i) f.h1[t * d + i] += f.a[t * d + i];
      matvec(wout, &f.h1[t * d], &f.logits[t * v], v, d);
    }
    return f;
  }

  // Reverse pass of forward_full for the objective
  //   scale * sum_{i} log softmax(logits[|prefix|-1+i])[seq[|prefix|+i]].
  void backward(const Sequence& seq, std::size_t prefix_len, const Forward& f,
                GradientAccumulator& acc, double scale) const {
    const std::size_t n = f.n;
    const std::size_t d = static_cast<std::size_t>(d_);
    const std::size_t v = static_cast<std::size_t>(vocab_.size());
    const double* wq = params_.segment_data("attn_wq");
    const double* wk = params_.segment_data("attn_wk");
    const double* wv = params_.segment_data("attn_wv");
    const double* wo = params_.segment_data("attn_wo");
    const double* w1 = params_.segment_data("ff_w1");
    const double* w2 = params_.segment_data("ff_w2");
    const double* wout = params_.segment_data("out_proj");

    double* d_tok = acc.data() + acc.layout().segment("tok_embed").offset;
    double* d_pos = acc.data() + acc.layout().segment("pos_embed").offset;
    double* d_wq = acc.data() + acc.layout().segment("attn_wq").offset;
    double* d_wk = acc.data() + acc.layout().segment("attn_wk").offset;
    double* d_wv = acc.data() + acc.layout().segment("attn_wv").offset;
    double* d_wo = acc.data() + acc.layout().segment("attn_wo").offset;
    double* d_w1 = acc.data() + acc.layout().segment("ff_w1").offset;
    double* d_w2 = acc.data() + acc.layout().segment("ff_w2").offset;
    double* d_wout = acc.data() + acc.layout().segment("out_proj").offset;

    std::vector<double> dh0(n * d, 0.0), dq(n * d, 0.0), dk(n * d, 0.0), dv(n * d, 0.0);
    std::vector<double> dlogits(v), dh1(d), da(d), dg(4 * d), df(4 * d), dctx(d);
    std::vector<double> dalpha;

    const double att_scale = 1.0 / std::sqrt(static_cast<double>(d_));
    const std::size_t first_target = prefix_len - 1;
    const std::size_t last_target = n - 2;

    for (std::size_t t = first_target; t <= last_target; ++t) {
      // d logits: scale * (one_hot(next token) - softmax)
      std::vector<double> logits(f.logits.begin() + t * v, f.logits.begin() + (t + 1) * v);
      std::vector<double> p = softmax(logits);
      for (std::size_t j = 0; j < v; ++j) dlogits[j] = -scale * p[j];
      dlogits[static_cast<std::size_t>(seq[t + 1])] += scale;

      outer_accum(d_wout, dlogits.data(), &f.h1[t * d], v, d);
      std::fill(dh1.begin(), dh1.end(), 0.0);
      matvec_t_accum(wout, dlogits.data(), dh1.data(), v, d);

      // h1 = a + W2 tanh(W1 a)
      for (std::size_t i = 0; i < d; ++i) da[i] = dh1[i];
      std::fill(dg.begin(), dg.end(), 0.0);
      matvec_t_accum(w2, dh1.data(), dg.data(), d, 4 * d);
      outer_accum(d_w2, dh1.data(), &f.g[t * 4 * d], d, 4 * d);
      for (std::size_t i = 0; i < 4 * d; ++i) {
        double gi = f.g[t * 4 * d + i];
        df[i] = dg[i] * (1.0 - gi * gi);
      }
      outer_accum(d_w1, df.data(), &f.a[t * d], 4 * d, d);
      matvec_t_accum(w1, df.data(), da.data(), 4 * d, d);

      // a = h0 + Wo ctx
      axpy(1.0, da.data(), &dh0[t * d], d);
      std::fill(dctx.begin(), dctx.end(), 0.0);
      matvec_t_accum(wo, da.data(), dctx.data(), d, d);
      outer_accum(d_wo, da.data(), &f.ctx[t * d], d, d);

      // attention: ctx_t = sum_{s<=t} alpha_ts v_s, softmax over scaled dots
      dalpha.assign(t + 1, 0.0);
      for (std::size_t s = 0; s <= t; ++s) {
        dalpha[s] = dot(dctx.data(), &f.v[s * d], d);
        axpy(f.alpha[t * n + s], dctx.data(), &dv[s * d], d);
      }
      double inner = 0.0;
      for (std::size_t s = 0; s <= t; ++s) inner += f.alpha[t * n + s] * dalpha[s];
      for (std::size_t s = 0; s <= t; ++s) {
        double dscore = f.alpha[t * n + s] * (dalpha[s] - inner);
        axpy(dscore * att_scale, &f.k[s * d], &dq[t * d], d);
        axpy(dscore * att_scale, &f.q[t * d], &dk[s * d], d);
      }
    }

    // Projections and embeddings, all positions (k/v gradients reach positions
    // before the first target).
    for (std::size_t t = 0; t < n; ++t) {
      outer_accum(d_wq, &dq[t * d], &f.h0[t * d], d, d);
      matvec_t_accum(wq, &dq[t * d], &dh0[t * d], d, d);
      outer_accum(d_wk, &dk[t * d], &f.h0[t * d], d, d);
      matvec_t_accum(wk, &dk[t * d], &dh0[t * d], d, d);
      outer_accum(d_wv, &dv[t * d], &f.h0[t * d], d, d);
      matvec_t_accum(wv, &dv[t * d], &dh0[t * d], d, d);
      axpy(1.0, &dh0[t * d], d_tok + static_cast<std::size_t>(seq[t]) * d, d);
      axpy(1.0, &dh0[t * d], d_pos + t * d, d);
    }
  }

  Vocabulary vocab_;
  int d_;
  int max_pos_;
  ParameterVector params_;
};

}  // namespace latro
