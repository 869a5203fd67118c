#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "latro/eval.hpp"
#include "latro/tabular_policy.hpp"
#include "latro/verify.hpp"

using namespace latro;

namespace {

Vocabulary v5() { return Vocabulary(0, 1, 2, {"^", "$", "@", "a", "b"}); }

// Deterministic pipeline: after the query's 'a', emit rationale [b], then ANS,
// then answer [b, EOS].
std::unique_ptr<TabularPolicy> scripted_policy() {
  auto p = std::make_unique<TabularPolicy>(v5(), 1);
  p->logits_row({3})[4] = 40.0;  // a -> b
  p->logits_row({4})[2] = 40.0;  // b -> ANS ... but also answer rows use 'b' context
  p->logits_row({2})[4] = 40.0;  // ANS -> b
  return p;
}

Dataset one_example_dataset() {
  Dataset ds{v5(), {}, Split::kEval, "scripted", 0};
  ds.examples.push_back({{0, 3}, {4, 1}, std::nullopt});
  return ds;
}

}  // namespace

TEST_CASE("greedy accuracy is 1 on a policy that emits the scripted answer") {
  auto p = scripted_policy();
  Dataset ds = one_example_dataset();
  // z = [b], then ANS; prediction [b] matches the answer [b, EOS] after the
  // trailing-EOS strip.
  DecodeLimits limits{4, 1};
  AccuracyResult acc = greedy_accuracy(*p, ds, limits, 1);
  CHECK(acc.accuracy == 1.0);
  CHECK(acc.context_overflows == 0);
}

TEST_CASE("uniform policy accuracy matches the closed-form sampling probability") {
  TabularPolicy uniform(v5(), 1);
  Dataset ds{v5(), {}, Split::kEval, "uniform", 0};
  for (int i = 0; i < 400; ++i) ds.examples.push_back({{0, 3}, {4, 1}, std::nullopt});
  DecodeLimits limits{2, 3};
  // Answer sampling stops at the first EOS or at the cap of 3. The only
  // prediction whose stripped form equals [b] is the path (b, EOS), so the
  // per-example success probability is exactly (1/V)^2.
  const double p_correct = 0.2 * 0.2;
  AccuracyResult acc = maj_at_k(uniform, ds, 1, limits, 1.0, 31, 2);
  const double se = std::sqrt(p_correct * (1 - p_correct) / 400.0);
  CHECK(std::abs(acc.accuracy - p_correct) <= 4.0 * se);
}

TEST_CASE("deterministic policy: maj@k equals greedy accuracy for all k") {
  auto p = scripted_policy();
  Dataset ds = one_example_dataset();
  DecodeLimits limits{4, 1};
  double greedy = greedy_accuracy(*p, ds, limits, 1).accuracy;
  for (int k : {1, 2, 4, 8}) {
    CHECK(maj_at_k(*p, ds, k, limits, 1.0, 7, 1).accuracy == greedy);
  }
}

TEST_CASE("majority vote tie-break picks the earliest-sampled answer") {
  std::vector<Sequence> preds = {{4, 1}, {3, 1}, {4}, {3}};
  CHECK(majority_vote(preds, 1) == Sequence{4});  // 2-2 tie, first seen at index 0
  std::vector<Sequence> preds2 = {{3, 1}, {4, 1}, {4}};
  CHECK(majority_vote(preds2, 1) == Sequence{4});
  // re-voting a stored dump reproduces the winner bit for bit
  CHECK(majority_vote(preds, 1) == majority_vote(preds, 1));
}

TEST_CASE("p_m_exact reduces to the answer distribution for a single possible z") {
  auto p = scripted_policy();
  // rationale space from [0,3] with the scripted rows is { [b, ANS] } w.p. ~1
  DecodeLimits limits{2, 1};
  std::map<Sequence, double> m = p_m_exact(*p, {0, 3}, limits);
  double sum = 0.0;
  for (const auto& [ans, prob] : m) sum += prob;
  CHECK(sum == Catch::Approx(1.0).margin(1e-10));
  // answer ctx row is ANS -> b with probability ~1
  CHECK(m.at({4}) == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("p_m_exact symmetry between interchangeable answers") {
  TabularPolicy p(v5(), 1);
  for (std::size_t row = 0; row < 5; ++row) {
    double* r = p.params().data() + row * 5;
    r[3] = 0.7;
    r[4] = 0.7;  // a and b identical everywhere
    r[0] = -1.0;
  }
  std::map<Sequence, double> m = p_m_exact(p, {0}, DecodeLimits{2, 1});
  CHECK(std::abs(m.at({3}) - m.at({4})) <= 1e-12);
}

TEST_CASE("vote frequency with a deterministic answer") {
  auto p = scripted_policy();
  Example ex{{0, 3}, {4, 1}, std::nullopt};
  DecodeLimits limits{4, 1};
  std::vector<VoteFrequencyRow> rows = vote_frequency_convergence(*p, ex, limits, {16, 64}, 3, 11, 1);
  for (const VoteFrequencyRow& row : rows) {
    CHECK(row.abs_deviation[0] == 0.0);  // F-hat = 1 = p_M at every K
  }
}

TEST_CASE("exact vote oracle agrees with a binomial special case") {
  // two answers with p=0.6: win prob of answer 0 under maj@5 =
  // sum_{j>=3} C(5,j) 0.6^j 0.4^(5-j) (odd k, no ties possible)
  double expect = 0.0;
  for (int j = 3; j <= 5; ++j) {
    double c = j == 3 ? 10 : (j == 4 ? 5 : 1);
    expect += c * std::pow(0.6, j) * std::pow(0.4, 5 - j);
  }
  CHECK(vote_win_prob_exact({0.6, 0.4}, 5, 0) == Catch::Approx(expect).margin(1e-12));
  // even k with ties: maj@2 with equal masses -> each wins half the tied mass
  double w = vote_win_prob_exact({0.5, 0.5}, 2, 0);
  CHECK(w == Catch::Approx(0.25 + 0.5 * 0.5).margin(1e-12));
}

TEST_CASE("ablation sweeps degenerate as expected") {
  auto p = scripted_policy();
  Dataset ds = one_example_dataset();
  // L beyond any emitted rationale changes nothing
  std::vector<std::pair<std::string, const PolicyModel*>> cks = {{"ck", p.get()}};
  std::vector<SweepPoint> pts = ablate_length(cks, ds, {1, 4, 12}, 1);
  CHECK(pts[1].accuracy == pts[2].accuracy);
  // L = 0 forces the empty rationale: direct answering
  std::vector<SweepPoint> zero = ablate_length(cks, ds, {0}, 1);
  Sequence direct = greedy_answer(*p, answer_context(v5(), ds.examples[0].query, {}),
                                  decode_limits_for(ds, 0).answer_cap);
  CHECK(zero[0].accuracy ==
        (answers_equal(direct, ds.examples[0].answer, 1) ? 1.0 : 0.0));

  std::vector<SweepPoint> maj = ablate_majk(*p, ds, {1, 2, 4}, 4, 1.0, 5, 1);
  CHECK(maj[0].accuracy == maj[1].accuracy);  // deterministic -> flat curve
  CHECK(maj[0].accuracy == maj[2].accuracy);
}

TEST_CASE("nll report on a uniform policy") {
  TabularPolicy uniform(v5(), 1);
  Dataset ds = one_example_dataset();
  ds.examples[0].golden_rationale = Sequence{3, 4};
  NllReport r = nll_comparison(uniform, ds, RationaleSource::kGolden, 4, 1.0, 3, 1);
  CHECK(r.mean_nll_direct == Catch::Approx(2.0 * std::log(5.0)).epsilon(1e-12));
  CHECK(r.mean_nll_with_rationale == Catch::Approx(2.0 * std::log(5.0)).epsilon(1e-12));
  CHECK(r.mean_paired_diff == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("context overflow during evaluation scores as incorrect, not fatal") {
  TabularPolicy tiny(v5(), 1, 4);  // max_context 4: query(2) + z + ANS + answer overflows
  Dataset ds = one_example_dataset();
  AccuracyResult acc = greedy_accuracy(tiny, ds, DecodeLimits{3, 2}, 1);
  CHECK(acc.accuracy == 0.0);
  CHECK(acc.context_overflows == 1);
  AccuracyResult maj = maj_at_k(tiny, ds, 3, DecodeLimits{3, 2}, 1.0, 9, 1);
  CHECK(maj.context_overflows == 1);
}

TEST_CASE("eval report JSON shape") {
  EvalReport rep;
  rep.task = "t";
  rep.checkpoint_id = "ck";
  rep.greedy_acc = 0.5;
  rep.maj_accuracy = {{1, 0.5}, {8, 0.6}};
  nlohmann::json j = rep.to_json();
  CHECK(j.contains("greedy_accuracy"));
  CHECK(j.at("maj_at_k").size() == 2);
  CHECK(j.at("maj_at_k")[0][0] == 1);
  CHECK(j.contains("mean_nll_direct"));
  CHECK(j.contains("truncated_fraction"));
}
