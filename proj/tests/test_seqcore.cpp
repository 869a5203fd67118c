#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "latro/rng.hpp"
#include "latro/sequence.hpp"

using namespace latro;

namespace {
Vocabulary test_vocab() { return Vocabulary(0, 1, 2, {"^", "$", "@", "a", "b", "c"}); }
}  // namespace

TEST_CASE("concat basics") {
  CHECK(concat({0, 5, 7}, {}) == Sequence{0, 5, 7});
  CHECK(concat({}, {2}) == Sequence{2});
  CHECK(concat({1, 2}, {3, 4}) == Sequence{1, 2, 3, 4});
}

TEST_CASE("concat is associative") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto random_seq = [&] {
      Sequence s(rng.next_below(5));
      for (TokenId& t : s) t = static_cast<TokenId>(rng.next_below(6));
      return s;
    };
    Sequence a = random_seq(), b = random_seq(), c = random_seq();
    CHECK(concat(concat(a, b), c) == concat(a, concat(b, c)));
  }
}

TEST_CASE("rationale_end finds the first terminator") {
  auto r = rationale_end({4, 4, 1, 9}, 2, 1);
  CHECK(r.end_index == 2);
  CHECK(r.terminated);

  r = rationale_end({4, 2, 1}, 2, 1);
  CHECK(r.end_index == 1);  // ANS precedes EOS
  CHECK(r.terminated);

  r = rationale_end({4, 4, 4}, 2, 1);
  CHECK(r.end_index == 3);
  CHECK_FALSE(r.terminated);
}

TEST_CASE("rationale_end is idempotent on the usable prefix") {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Sequence z(1 + rng.next_below(8));
    for (TokenId& t : z) t = static_cast<TokenId>(rng.next_below(6));
    auto first = rationale_end(z, 2, 1);
    Sequence usable(z.begin(), z.begin() + static_cast<long>(first.end_index));
    auto second = rationale_end(usable, 2, 1);
    CHECK(second.end_index == usable.size());
    CHECK_FALSE(second.terminated);
  }
}

TEST_CASE("answers_equal strips trailing EOS") {
  CHECK(answers_equal({3, 1}, {3, 1}, 1));
  CHECK(answers_equal({3, 1}, {3}, 1));
  CHECK_FALSE(answers_equal({3, 1}, {4, 1}, 1));
}

TEST_CASE("answers_equal is an equivalence relation") {
  Rng rng(13);
  std::vector<Sequence> pool;
  for (int i = 0; i < 30; ++i) {
    Sequence s(rng.next_below(4));
    for (TokenId& t : s) t = static_cast<TokenId>(rng.next_below(4));
    if (rng.next_below(2)) s.push_back(1);
    pool.push_back(s);
  }
  for (const Sequence& a : pool) {
    CHECK(answers_equal(a, a, 1));  // reflexive
    for (const Sequence& b : pool) {
      CHECK(answers_equal(a, b, 1) == answers_equal(b, a, 1));  // symmetric
      for (const Sequence& c : pool) {
        if (answers_equal(a, b, 1) && answers_equal(b, c, 1)) {
          CHECK(answers_equal(a, c, 1));  // transitive
        }
      }
    }
  }
}

TEST_CASE("vocabulary invariants") {
  CHECK_THROWS_AS(Vocabulary(0, 0, 2, {"^", "$", "@"}), Error);           // reserved not distinct
  CHECK_THROWS_AS(Vocabulary(0, 1, 5, {"^", "$", "@"}), Error);           // ANS out of range
  CHECK_THROWS_AS(Vocabulary(0, 1, 2, {"^", "$", "$"}), Error);           // glyph bijection
  Vocabulary v = test_vocab();
  CHECK(v.id_of("a") == 3);
  CHECK(v.render({0, 3, 4, 1}) == "^ab$");
}

TEST_CASE("example validation") {
  Vocabulary v = test_vocab();
  Example good{{0, 3}, {4, 1}, Sequence{5, 5}};
  CHECK_NOTHROW(good.validate(v));

  Example no_bos{{3}, {4, 1}, {}};
  CHECK_THROWS_AS(no_bos.validate(v), Error);
  Example no_eos{{0, 3}, {4}, {}};
  CHECK_THROWS_AS(no_eos.validate(v), Error);
  Example bad_golden{{0, 3}, {4, 1}, Sequence{5, 1, 5}};  // EOS inside golden rationale
  CHECK_THROWS_AS(bad_golden.validate(v), Error);
}

TEST_CASE("dataset JSONL round-trip") {
  Dataset ds{test_vocab(), {}, Split::kTrain, "unit-task", 17};
  ds.examples.push_back({{0, 3}, {4, 1}, Sequence{5}});
  ds.examples.push_back({{0, 4, 5}, {3, 3, 1}, std::nullopt});

  auto path = std::filesystem::temp_directory_path() / "latro_test_ds.jsonl";
  write_dataset_jsonl(ds, path.string());
  Dataset back = read_dataset_jsonl(path.string());

  REQUIRE(back.examples.size() == 2);
  CHECK(back.vocab == ds.vocab);
  CHECK(back.task_name == "unit-task");
  CHECK(back.generator_seed == 17);
  CHECK(back.examples[0].query == ds.examples[0].query);
  CHECK(back.examples[0].golden_rationale == ds.examples[0].golden_rationale);
  CHECK_FALSE(back.examples[1].golden_rationale.has_value());
  std::filesystem::remove(path);
}

TEST_CASE("empty dataset rejected") {
  Dataset ds{test_vocab(), {}, Split::kEval, "t", 0};
  CHECK_THROWS_AS(ds.validate(), Error);
}
